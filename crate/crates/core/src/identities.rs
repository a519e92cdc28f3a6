//! Exact identities and lemma checks on random small instances.
//!
//! Every function returns [`CheckRecord`]s instead of asserting, so the same
//! checks back the `verify` command and the test suites.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_from_coordinate_localization, l_glauber};
use crate::linalg::max_abs_diff;
use crate::measure::SpinMeasure;
use crate::models::{build_hardcore, Graph, HardcoreSpec};
use crate::report::CheckRecord;
use crate::rng;
use crate::spectra::{spectral_gap, verify_entropy_step_inequality, verify_localization_gap_identity};
use crate::stability::{
    alo_bound, lemma_hphi_check, lemma_tiltmarginals_check, si_all_pinnings, tilt_grid, DEFAULT_PIN_BUDGET,
};

/// Full-support measure with log-weights drawn from `N(0, σ²)`.
pub fn random_measure<R: Rng>(n: usize, sigma: f64, rng: &mut R) -> Result<SpinMeasure> {
    let logw: Vec<f64> = (0..1usize << n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    SpinMeasure::from_cube_log_weights(n, &logw)
}

/// Cube-indexed test functions: Gaussian entries, or `exp` of them when
/// `positive`.
pub fn random_functions<R: Rng>(n: usize, count: usize, positive: bool, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..1usize << n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    if positive { z.exp() } else { z }
                })
                .collect()
        })
        .collect()
}

/// The coordinate-localization kernel revealing `f - ℓ` coordinates equals
/// `ℓ`-Glauber, for every `ℓ`.
pub fn kernel_equivalence(nu: &SpinMeasure, instance: &str) -> Result<Vec<CheckRecord>> {
    let f = nu.num_free();
    (1..=f)
        .into_par_iter()
        .map(|l| {
            let a = kernel_from_coordinate_localization(nu, f - l)?;
            let b = l_glauber(nu, l)?;
            let d = max_abs_diff(&a.p, &b.p);
            Ok(CheckRecord::le("kernel_equivalence", &format!("{instance} l={l}"), d, 0.0, 1e-12))
        })
        .collect()
}

/// `ℓ`-Glauber on the uniform measure: gap and pinning product both equal `ℓ/n`.
pub fn product_tightness(n: usize) -> Result<Vec<CheckRecord>> {
    let nu = SpinMeasure::uniform(n)?;
    let si = si_all_pinnings(&nu, DEFAULT_PIN_BUDGET)?;
    let mut out = Vec::new();
    for l in 1..=n {
        let inst = format!("uniform n={n} l={l}");
        let exact = l as f64 / n as f64;
        let gap = spectral_gap(&l_glauber(&nu, l)?)?.gap;
        out.push(CheckRecord::eq("tightness_gap", &inst, gap, exact, 1e-10));
        out.push(CheckRecord::eq("tightness_product", &inst, alo_bound(&si, n, l), exact, 1e-10));
    }
    Ok(out)
}

/// Influence matrix from conditional means against `Cov diag(Cov)^{-1}`, and
/// its spectral radius against the correlation norm.
pub fn influence_identity(nu: &SpinMeasure, instance: &str) -> Result<Vec<CheckRecord>> {
    let inf = nu.influence_correlation()?;
    let cond = nu.influence_by_conditioning()?;
    let rho = inf.psi.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(vec![
        CheckRecord::le("influence_conditioning", instance, max_abs_diff(&inf.psi, &cond), 0.0, 1e-10),
        CheckRecord::eq("influence_radius", instance, rho, inf.rho, 1e-10),
    ])
}

/// Pinning one coordinate moves the mean by `(1 + s b_i)^{-1} Cov s e_i`.
pub fn pinned_mean_shift(nu: &SpinMeasure, instance: &str) -> Result<Vec<CheckRecord>> {
    let m = nu.moments();
    let n = nu.n();
    let mut worst: f64 = 0.0;
    for &i in nu.free() {
        for s in [-1i8, 1] {
            let mut u = vec![0i8; n];
            u[i] = s;
            let shifted = nu.pin(&u)?.mean();
            let sf = s as f64;
            for k in 0..n {
                let rhs = sf * m.cov[(k, i)] / (1.0 + sf * m.b[i]);
                worst = worst.max((shifted[k] - m.b[k] - rhs).abs());
            }
        }
    }
    Ok(vec![CheckRecord::le("pinned_mean_shift", instance, worst, 0.0, 1e-10)])
}

/// Legendre pair `g(b(T_v ν)) + L(v) = <v, b(T_v ν)>`, and the Hessian of `g`
/// by central differences against `Cov(T_v ν)^{-1}` (relative Frobenius error).
pub fn legendre_checks(nu: &SpinMeasure, v: &[f64], instance: &str) -> Result<Vec<CheckRecord>> {
    let t = nu.tilt(v);
    let mom = t.moments();
    let b: Vec<f64> = mom.b.iter().cloned().collect();
    let g = nu.legendre_dual(&b)?;
    let pair = g + nu.log_laplace(v) - v.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>();
    let n = nu.n();
    let inv = mom.cov.clone().try_inverse().ok_or_else(|| Error::PreconditionViolated("singular covariance".into()))?;
    let h = 1e-3;
    let at = |di: usize, si: f64, dj: usize, sj: f64| -> Result<f64> {
        let mut x = b.clone();
        x[di] += si * h;
        x[dj] += sj * h;
        nu.legendre_dual(&x)
    };
    let mut fd = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d = (at(i, 1.0, j, 1.0)? - at(i, 1.0, j, -1.0)? - at(i, -1.0, j, 1.0)? + at(i, -1.0, j, -1.0)?)
                / (4.0 * h * h);
            fd[(i, j)] = d;
            fd[(j, i)] = d;
        }
    }
    let rel = (&fd - &inv).norm() / inv.norm();
    Ok(vec![
        CheckRecord::eq("legendre_pair", instance, pair, 0.0, 1e-10),
        CheckRecord::le("legendre_hessian", instance, rel, 0.0, 1e-4),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random measures per identity family.
    pub measures: usize,
    /// Random test functions per measure in the localization identities.
    pub functions: usize,
    /// Nodes per variable in the scalar `H`/`Φ` comparisons.
    pub hphi_points: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 0, measures: 20, functions: 5, hphi_points: 401 }
    }
}

/// Every exact identity and lemma check on seeded random instances.
pub fn identity_suite(opts: &SuiteOptions) -> Result<Vec<CheckRecord>> {
    let mut out = Vec::new();
    for k in 0..opts.measures {
        let mut g = rng::stream(opts.seed, k as u64);
        let n = 3 + k % 4;
        let nu = random_measure(n, 1.0, &mut g)?;
        let inst = format!("random#{k} n={n}");
        out.extend(kernel_equivalence(&nu, &inst)?);
        out.extend(influence_identity(&nu, &inst)?);
        out.extend(pinned_mean_shift(&nu, &inst)?);
        let tau = g.random_range(0..=n);
        let phis = random_functions(n, opts.functions, false, &mut g);
        let fs = random_functions(n, opts.functions, true, &mut g);
        out.extend(verify_localization_gap_identity(&nu, tau, &phis, &inst)?);
        out.extend(verify_entropy_step_inequality(&nu, tau, &fs, &inst)?);
        if n <= 4 {
            let v: Vec<f64> = (0..n).map(|_| 0.5 * g.sample::<f64, _>(StandardNormal)).collect();
            out.extend(legendre_checks(&nu, &v, &inst)?);
        }
    }
    for n in [4, 6, 8] {
        out.extend(product_tightness(n)?);
    }
    out.extend(lemma_hphi_check(opts.hphi_points));
    for (name, graph, lambda) in [("P4", Graph::path(4), 1.0), ("C6", Graph::cycle(6), 0.5), ("star3", Graph::star(3), 2.0)] {
        let nu = build_hardcore(&HardcoreSpec::new(graph, lambda)?)?;
        let vs = tilt_grid(nu.n(), &[0.5, 1.0, 2.0], 8, opts.seed);
        out.extend(lemma_tiltmarginals_check(&nu, &vs, &format!("hardcore {name} lambda={lambda}"))?);
    }
    Ok(out)
}
