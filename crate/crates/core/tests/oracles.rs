//! Library results against naive reimplementations and against values
//! computed outside this crate.

use locmix::identities::random_measure;
use locmix::kernels::{cube_rgd, glauber, l_glauber};
use locmix::localization::{nf_simulate, LocEvent, NfOptions};
use locmix::models::graph_coupling;
use locmix::spectra::{spectral_gap, worst_mixing_time, DEFAULT_MIX_CAP};
use locmix::{rng, Graph, SpinMeasure};
use nalgebra::DMatrix;
use rand::Rng;

/// Heat-bath kernel straight from the definition: pick a uniform `l`-subset,
/// resample it from the conditional law given the rest.
fn naive_block_glauber(nu: &SpinMeasure, l: usize) -> DMatrix<f64> {
    let n = nu.n();
    let dim = 1usize << n;
    let w = nu.to_cube();
    let subsets: Vec<usize> = (0..dim).filter(|s| s.count_ones() as usize == l).collect();
    let mut p = DMatrix::zeros(dim, dim);
    for x in 0..dim {
        for &s in &subsets {
            let z: f64 = (0..dim).filter(|y| (y & !s) == (x & !s)).map(|y| w[y]).sum();
            for y in (0..dim).filter(|y| (y & !s) == (x & !s)) {
                p[(x, y)] += w[y] / z / subsets.len() as f64;
            }
        }
    }
    p
}

/// `1 - λ₂` from the eigenvalues of the unsymmetrized matrix.
fn naive_gap(p: &DMatrix<f64>) -> f64 {
    let mut ev: Vec<f64> = p.complex_eigenvalues().iter().map(|z| z.re).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    1.0 - ev[1]
}

#[test]
fn block_glauber_against_definition() {
    for k in 0..6u64 {
        let n = 2 + (k as usize) % 4;
        let nu = random_measure(n, 1.0, &mut rng::stream(17, k)).unwrap();
        for l in 1..=n {
            let lib = l_glauber(&nu, l).unwrap();
            let naive = naive_block_glauber(&nu, l);
            assert!((&lib.p - &naive).amax() < 1e-13, "n={n} l={l}");
            let gap = spectral_gap(&lib).unwrap().gap;
            assert!((gap - naive_gap(&naive)).abs() < 1e-9, "n={n} l={l}");
        }
        assert!((&glauber(&nu).unwrap().p - &naive_block_glauber(&nu, 1)).amax() < 1e-13);
    }
}

#[test]
fn uniform_three_bit_mixing_times() {
    // Matrix powering in double precision outside the crate.
    let k = glauber(&SpinMeasure::uniform(3).unwrap()).unwrap();
    for (eps, t) in [(0.25, 3), (0.1, 5), (0.01, 11)] {
        assert_eq!(worst_mixing_time(&k, eps, DEFAULT_MIX_CAP).unwrap(), t, "eps={eps}");
    }
}

#[test]
fn single_spin_rgd_against_quadrature() {
    // E[σ(2(1 + √η g)/η)] by 200-node Hermite quadrature.
    let nu = SpinMeasure::uniform(1).unwrap();
    for (eta, stay) in [(0.5, 0.8844908890353327), (1.0, 0.7752002453966637), (2.0, 0.6750567023375653)] {
        let est = cube_rgd(&nu, eta, 20_000, 3, None).unwrap();
        let (got, se) = (est.kernel.p[(1, 1)], est.se[(1, 1)]);
        assert!((got - stay).abs() <= 4.0 * se, "eta={eta}: {got} vs {stay} (se {se})");
    }
}

#[test]
fn negative_fields_jump_law_on_one_spin() {
    // The pinning rate is 1 + tanh(-t), so P(T <= t) = 1 - exp(-(t - log cosh t)).
    let nu = SpinMeasure::uniform(1).unwrap();
    let s = 3.0;
    let count = 5000;
    let mut times: Vec<f64> = (0..count as u64)
        .map(|task| {
            let path = nf_simulate(&nu, s, &NfOptions::default(), 5, task).unwrap();
            path.events
                .iter()
                .zip(&path.times)
                .find(|(e, _)| matches!(e, LocEvent::Pin { .. }))
                .map_or(f64::INFINITY, |(_, t)| *t)
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let cdf = |t: f64| 1.0 - (-(t - t.cosh().ln())).exp();
    let mut ks: f64 = 0.0;
    for (i, &t) in times.iter().enumerate().take_while(|(_, t)| t.is_finite()) {
        let lo = i as f64 / count as f64;
        let hi = (i + 1) as f64 / count as f64;
        ks = ks.max((cdf(t) - lo).abs()).max((hi - cdf(t)).abs());
    }
    let censored = times.iter().filter(|t| t.is_infinite()).count() as f64 / count as f64;
    ks = ks.max((1.0 - censored - cdf(s)).abs());
    // 1% critical value of the one-sample statistic.
    assert!(ks < 1.63 / (count as f64).sqrt(), "KS {ks}");
}

#[test]
fn graph_coupling_is_psd_and_bounded_by_degree() {
    let mut g = rng::stream(23, 0);
    for _ in 0..40 {
        let n = g.random_range(2..=7);
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|_| g.random_bool(0.5)).collect();
        let graph = Graph::from_edges(n, &edges).unwrap();
        let ev = graph_coupling(&graph).symmetric_eigenvalues();
        let (lo, hi) = ev.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        assert!(lo >= -1e-12, "{edges:?}: {lo}");
        assert!(hi <= graph.max_degree() as f64 + 1e-12, "{edges:?}: {hi}");
    }
}
