use locmix::kernels::{glauber, kernel_from_coordinate_localization, l_glauber};
use locmix::localization::{coord_enumerate, DEFAULT_BUDGET};
use locmix::rgo_grid::rgo_bound;
use locmix::spectra::{entropy_pi, spectral_gap, variance_pi};
use locmix::stability::h_divergence;
use locmix::{kl, SpinMeasure};
use proptest::prelude::*;

fn measure() -> impl Strategy<Value = SpinMeasure> {
    (2usize..=5)
        .prop_flat_map(|n| prop::collection::vec(-2.0f64..2.0, 1 << n).prop_map(move |w| (n, w)))
        .prop_map(|(n, w)| SpinMeasure::from_cube_log_weights(n, &w).unwrap())
}

fn measure_and_vector() -> impl Strategy<Value = (SpinMeasure, Vec<f64>)> {
    measure().prop_flat_map(|nu| {
        let n = nu.n();
        (Just(nu), prop::collection::vec(-1.5f64..1.5, n))
    })
}

fn measure_and_function() -> impl Strategy<Value = (SpinMeasure, Vec<f64>)> {
    measure().prop_flat_map(|nu| {
        let n = nu.n();
        (Just(nu), prop::collection::vec(-3.0f64..3.0, 1 << n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn glauber_is_stochastic_and_reversible(nu in measure()) {
        let k = glauber(&nu).unwrap();
        prop_assert!(k.row_sum_error() < 1e-12);
        prop_assert!(k.detailed_balance_error() < 1e-12);
        prop_assert!(k.p.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn gap_lies_in_unit_interval(nu in measure(), l in 1usize..=5) {
        let l = l.min(nu.num_free());
        let gap = spectral_gap(&l_glauber(&nu, l).unwrap()).unwrap().gap;
        prop_assert!(gap > 0.0 && gap <= 1.0 + 1e-12, "gap {gap}");
    }

    #[test]
    fn larger_blocks_mix_no_slower(nu in measure()) {
        // Resampling more coordinates is a coarser conditional expectation.
        let f = nu.num_free();
        let gaps: Vec<f64> = (1..=f).map(|l| spectral_gap(&l_glauber(&nu, l).unwrap()).unwrap().gap).collect();
        prop_assert!(gaps.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{gaps:?}");
        prop_assert!((gaps[f - 1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn coordinate_kernel_matches_block_glauber(nu in measure(), l in 1usize..=5) {
        let f = nu.num_free();
        let l = l.min(f);
        let a = kernel_from_coordinate_localization(&nu, f - l).unwrap();
        let b = l_glauber(&nu, l).unwrap();
        prop_assert!((&a.p - &b.p).amax() < 1e-12);
    }

    #[test]
    fn coordinate_ensemble_averages_to_start(nu in measure(), t in 0usize..=5) {
        let t = t.min(nu.num_free());
        let ens = coord_enumerate(&nu, t, DEFAULT_BUDGET).unwrap();
        prop_assert!((ens.total_weight() - 1.0).abs() < 1e-12);
        prop_assert!(ens.mixture_error(&nu) < 1e-10);
    }

    #[test]
    fn tilts_compose((nu, v) in measure_and_vector()) {
        let w: Vec<f64> = v.iter().map(|x| 0.5 - x).collect();
        let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
        prop_assert!(nu.tilt(&v).tilt(&w).max_abs_diff(&nu.tilt(&sum)) < 1e-12);
        prop_assert!(nu.tilt(&vec![0.0; nu.n()]).max_abs_diff(&nu) < 1e-15);
    }

    #[test]
    fn pinning_fixes_coordinates(nu in measure(), i in 0usize..5, up in any::<bool>()) {
        let n = nu.n();
        let i = i % n;
        let mut u = vec![0i8; n];
        u[i] = if up { 1 } else { -1 };
        let p = nu.pin(&u).unwrap();
        prop_assert_eq!(p.num_free(), n - 1);
        prop_assert!((p.mean()[i] - u[i] as f64).abs() < 1e-15);
    }

    #[test]
    fn moment_matching_inverts_the_tilt((nu, v) in measure_and_vector()) {
        let target = nu.tilt(&v).mean();
        let w = nu.moment_matching_tilt(&target, 200).unwrap();
        let got = nu.tilt(&w).mean();
        prop_assert!(got.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-8));
        // Zero exactly at the mean, nonnegative elsewhere.
        prop_assert!(nu.legendre_dual(&nu.mean()).unwrap().abs() < 1e-10);
        prop_assert!(nu.legendre_dual(&target).unwrap() >= -1e-12);
    }

    #[test]
    fn entropy_and_variance_are_nonnegative((nu, f) in measure_and_function()) {
        let pi = nu.to_cube();
        let pos: Vec<f64> = f.iter().map(|x| x.exp()).collect();
        prop_assert!(variance_pi(&pi, &f) >= -1e-12);
        prop_assert!(entropy_pi(&pi, &pos) >= -1e-12);
        // Ent is homogeneous of degree one.
        let scaled: Vec<f64> = pos.iter().map(|x| 3.0 * x).collect();
        prop_assert!((entropy_pi(&pi, &scaled) - 3.0 * entropy_pi(&pi, &pos)).abs() < 1e-9 * (1.0 + entropy_pi(&pi, &pos)));
    }

    #[test]
    fn glauber_does_not_increase_entropy((nu, f) in measure_and_function()) {
        let k = glauber(&nu).unwrap();
        let g: Vec<f64> = k.from_cube_function(&f.iter().map(|x| x.exp()).collect::<Vec<_>>());
        let pg: Vec<f64> = (&k.p * nalgebra::DVector::from_vec(g.clone())).iter().cloned().collect();
        prop_assert!(entropy_pi(&k.pi, &pg) <= entropy_pi(&k.pi, &g) + 1e-10);
    }

    #[test]
    fn divergences_are_nonnegative((nu, v) in measure_and_vector()) {
        let t = nu.tilt(&v);
        prop_assert!(kl(&t, &nu).unwrap() >= -1e-12);
        prop_assert!(kl(&nu, &nu).unwrap().abs() < 1e-12);
        let (a, b) = (t.mean(), nu.mean());
        prop_assert!(h_divergence(&a, &b).unwrap() >= -1e-12);
        prop_assert!(h_divergence(&b, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rgo_rate_is_monotone(mu in 0.01f64..10.0, eta in 0.01f64..10.0) {
        let r = rgo_bound(mu, eta);
        prop_assert!(r > 0.0 && r < 1.0);
        prop_assert!(rgo_bound(mu, 2.0 * eta) > r);
        prop_assert!(rgo_bound(2.0 * mu, eta) > r);
    }
}
