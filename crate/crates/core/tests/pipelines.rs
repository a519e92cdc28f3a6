use std::time::Instant;

use locmix::linalg::random_pd_with_norm;
use locmix::models::Graph;
use locmix::pipelines::{
    ferro_susceptibility_bound, graphical_ising_bound, hardcore_pipeline, theorem_sk_pipeline, GraphIsingOptions,
    HardcoreOptions, PipelineReport, SkOptions,
};
use locmix::report::first_failure;
use locmix::{rng, Error, IsingSpec};
use nalgebra::DMatrix;

fn assert_pass(r: &PipelineReport) {
    if let Some(f) = first_failure(&r.ingredients) {
        panic!("{} {}: {f:?}", r.pipeline, r.instance);
    }
}

#[test]
fn sk_two_spin_ferromagnet() {
    let j = DMatrix::from_row_slice(2, 2, &[0.1, 0.1, 0.1, 0.1]);
    let spec = IsingSpec::new(j, vec![0.0; 2]).unwrap();
    let r = theorem_sk_pipeline(&spec, &SkOptions::default()).unwrap();
    assert!((r.assembled_bound - 0.3).abs() < 1e-12);
    assert!(r.brackets.mlsi_upper.unwrap() >= 0.3);
    assert_pass(&r);
}

#[test]
fn sk_zero_coupling_is_one_over_n() {
    let spec = IsingSpec::new(DMatrix::zeros(3, 3), vec![0.2, -0.1, 0.0]).unwrap();
    let r = theorem_sk_pipeline(&spec, &SkOptions { fields: 5, ..SkOptions::default() }).unwrap();
    assert!((r.assembled_bound - 1.0 / 3.0).abs() < 1e-15);
    assert_pass(&r);
}

#[test]
fn sk_mini_glass() {
    let mut g = rng::stream(11, 0);
    let j = random_pd_with_norm(6, 0.25, &mut g);
    let spec = IsingSpec::new(j, vec![0.0; 6]).unwrap();
    let t = Instant::now();
    let r = theorem_sk_pipeline(&spec, &SkOptions { fields: 20, ..SkOptions::default() }).unwrap();
    eprintln!("sk n=6: {:?} bound {} brackets {:?}", t.elapsed(), r.assembled_bound, r.brackets);
    assert_pass(&r);
}

#[test]
fn sk_rejects_indefinite_coupling() {
    let j = DMatrix::from_row_slice(2, 2, &[0.0, 0.2, 0.2, 0.0]);
    let spec = IsingSpec::new(j, vec![0.0; 2]).unwrap();
    assert!(matches!(theorem_sk_pipeline(&spec, &SkOptions::default()), Err(Error::PreconditionViolated(_))));
}

fn cycle_with_chords() -> Graph {
    Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4), (2, 5)]).unwrap()
}

#[test]
fn graphical_cubic_instance() {
    let g = cycle_with_chords();
    let beta = 0.3;
    let t = Instant::now();
    let r = graphical_ising_bound(&g, beta, &[0.0; 6], &GraphIsingOptions::default()).unwrap();
    let e = beta.exp();
    assert!((r.fitted_constants["delta"] - (3.0 - e) / (1.0 + e)).abs() < 1e-12);
    eprintln!("graphical: {:?} {:?}", t.elapsed(), r.fitted_constants);
    assert_pass(&r);
    let neg = graphical_ising_bound(&g, -beta, &[0.0; 6], &GraphIsingOptions::default()).unwrap();
    assert!((neg.assembled_bound - r.assembled_bound).abs() < 1e-12);
    assert_pass(&neg);
}

#[test]
fn graphical_zero_temperature_limits() {
    let g = cycle_with_chords();
    let r = graphical_ising_bound(&g, 0.0, &[0.0; 6], &GraphIsingOptions::default()).unwrap();
    assert!((r.assembled_bound - 1.0 / 6.0).abs() < 1e-15);
    let f = ferro_susceptibility_bound(&g, 0.0, &GraphIsingOptions::default()).unwrap();
    assert!((f.assembled_bound - 1.0 / 6.0).abs() < 1e-12);
    assert_pass(&f);
    assert_eq!(graphical_ising_bound(&g, 2.0, &[0.0; 6], &GraphIsingOptions::default()).unwrap_err(), Error::NotUnique);
}

#[test]
fn ferro_cubic_instance() {
    let r = ferro_susceptibility_bound(&cycle_with_chords(), 0.3, &GraphIsingOptions::default()).unwrap();
    eprintln!("ferro: {:?}", r.fitted_constants);
    assert_pass(&r);
    assert!(matches!(ferro_susceptibility_bound(&cycle_with_chords(), -0.1, &GraphIsingOptions::default()), Err(Error::NotFerromagnetic(..))));
}

#[test]
fn hardcore_single_vertex() {
    let g = Graph::from_edges(1, &[]).unwrap();
    let r = hardcore_pipeline(&g, 1.0, &HardcoreOptions::default()).unwrap();
    assert_eq!(r.fitted_constants["t_mix"], 1.0);
    assert_pass(&r);
}

#[test]
fn hardcore_path_four() {
    let t = Instant::now();
    // Δ is floored at 3 for the threshold; λ = λ_3 / 2 gives δ = 1/2.
    let r = hardcore_pipeline(&Graph::path(4), 2.0, &HardcoreOptions::default()).unwrap();
    assert!((r.fitted_constants["delta"] - 0.5).abs() < 1e-12);
    eprintln!("P4: {:?} {:?}", t.elapsed(), r.fitted_constants);
    assert_pass(&r);
}

#[test]
fn hardcore_non_unique_is_rejected() {
    assert_eq!(hardcore_pipeline(&Graph::path(4), 5.0, &HardcoreOptions::default()).unwrap_err(), Error::NotUnique);
}
