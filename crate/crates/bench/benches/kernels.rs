use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use locmix::identities::random_measure;
use locmix::kernels::{glauber, kernel_from_coordinate_localization, l_glauber};
use locmix::localization::{nf_simulate, NfOptions};
use locmix::models::build_hardcore;
use locmix::rgo_grid::{gaussian_grid, rgd_kernel};
use locmix::spectra::{mlsi_adversarial, spectral_gap, MlsiOptions};
use locmix::stability::{si_all_pinnings, DEFAULT_PIN_BUDGET};
use locmix::{rng, Graph, HardcoreSpec};

fn kernels(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernels");
    for n in [6, 8, 10] {
        let nu = random_measure(n, 1.0, &mut rng::stream(1, n as u64)).unwrap();
        g.bench_with_input(BenchmarkId::new("glauber", n), &nu, |b, nu| b.iter(|| glauber(black_box(nu)).unwrap()));
        g.bench_with_input(BenchmarkId::new("l_glauber_2", n), &nu, |b, nu| b.iter(|| l_glauber(black_box(nu), 2).unwrap()));
        g.bench_with_input(BenchmarkId::new("coordinate_tau_half", n), &nu, |b, nu| {
            b.iter(|| kernel_from_coordinate_localization(black_box(nu), n / 2).unwrap())
        });
    }
    g.finish();
}

fn spectra(c: &mut Criterion) {
    let mut g = c.benchmark_group("spectra");
    g.sample_size(20);
    for n in [6, 8] {
        let k = glauber(&random_measure(n, 1.0, &mut rng::stream(2, n as u64)).unwrap()).unwrap();
        g.bench_with_input(BenchmarkId::new("gap", n), &k, |b, k| b.iter(|| spectral_gap(black_box(k)).unwrap()));
        let opts = MlsiOptions { restarts: 4, ..MlsiOptions::default() };
        g.bench_with_input(BenchmarkId::new("mlsi_adversarial", n), &k, |b, k| {
            b.iter(|| mlsi_adversarial(black_box(k), &opts, 0).unwrap())
        });
    }
    g.finish();
}

fn certificates(c: &mut Criterion) {
    let mut g = c.benchmark_group("certificates");
    g.sample_size(10);
    let nu = build_hardcore(&HardcoreSpec::new(Graph::cycle(8), 1.0).unwrap()).unwrap();
    g.bench_function("si_all_pinnings_c8", |b| b.iter(|| si_all_pinnings(black_box(&nu), DEFAULT_PIN_BUDGET).unwrap()));
    g.bench_function("nf_path_c8", |b| b.iter(|| nf_simulate(black_box(&nu), 2.0, &NfOptions::default(), 0, 0).unwrap()));
    g.finish();
}

fn rgo(c: &mut Criterion) {
    let mut g = c.benchmark_group("rgo");
    g.sample_size(10);
    for m in [128, 256] {
        let gm = gaussian_grid(1.0, m).unwrap();
        g.bench_with_input(BenchmarkId::new("rgd_kernel", m), &gm, |b, gm| b.iter(|| rgd_kernel(black_box(gm), 1.0).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, kernels, spectra, certificates, rgo);
criterion_main!(benches);
