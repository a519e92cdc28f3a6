//! Spectral gap, adversarial MLSI estimates, Dirichlet-form identities for
//! localization kernels, and total-variation mixing times.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_from_coordinate_localization, Kernel};
use crate::linalg::sym_eigen;
use crate::localization::{coord_enumerate, Functional, DEFAULT_BUDGET};
use crate::measure::{phi, SpinMeasure};
use crate::report::CheckRecord;
use crate::rng;

pub use crate::localization::expected_post as expected_post_localization;

/// Largest detailed-balance violation accepted as reversible.
pub const REVERSIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub gap: f64,
    /// Eigenvalues of `P`, ascending.
    pub eigenvalues: Vec<f64>,
    /// State-indexed eigenfunction with `E_π φ = 0` and `Var_π φ = 1`.
    pub witness: Vec<f64>,
}

fn check_kernel(k: &Kernel) -> Result<()> {
    if let Some(x) = k.pi.iter().position(|p| !(*p > 0.0)) {
        return Err(Error::ZeroStationaryRow(x));
    }
    let err = k.detailed_balance_error();
    if err > REVERSIBILITY_TOL {
        return Err(Error::NotReversible(err));
    }
    Ok(())
}

/// `D^{1/2} P D^{-1/2}`, symmetrized.
fn symmetrized(k: &Kernel) -> DMatrix<f64> {
    let n = k.len();
    let s: Vec<f64> = k.pi.iter().map(|p| p.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |x, y| s[x] * k.p[(x, y)] / s[y]);
    (&m + m.transpose()) * 0.5
}

/// `1 - λ_2(P)` by a full symmetric eigendecomposition.
pub fn spectral_gap(k: &Kernel) -> Result<SpectralReport> {
    check_kernel(k)?;
    let n = k.len();
    let (vals, vecs) = sym_eigen(&symmetrized(k));
    if n == 1 {
        return Ok(SpectralReport { gap: 1.0, eigenvalues: vals, witness: vec![0.0] });
    }
    // The top eigenvector is √π; the next one carries the gap.
    let col = vecs.column(n - 2);
    let mut w: Vec<f64> = (0..n).map(|x| col[x] / k.pi[x].sqrt()).collect();
    let mean: f64 = w.iter().zip(&k.pi).map(|(a, p)| a * p).sum();
    w.iter_mut().for_each(|a| *a -= mean);
    let var: f64 = w.iter().zip(&k.pi).map(|(a, p)| a * a * p).sum();
    if var > 0.0 {
        w.iter_mut().for_each(|a| *a /= var.sqrt());
    }
    Ok(SpectralReport { gap: 1.0 - vals[n - 2], eigenvalues: vals, witness: w })
}

/// `½ Σ π(x) P(x,y) (φ(x) - φ(y))²` for a state-indexed `φ`.
pub fn dirichlet_form(k: &Kernel, phi: &[f64]) -> f64 {
    let n = k.len();
    let mut acc = 0.0;
    for x in 0..n {
        for y in 0..n {
            let d = phi[x] - phi[y];
            acc += k.pi[x] * k.p[(x, y)] * d * d;
        }
    }
    0.5 * acc
}

/// `Var_π φ`.
pub fn variance_pi(pi: &[f64], phi: &[f64]) -> f64 {
    let m: f64 = pi.iter().zip(phi).map(|(p, f)| p * f).sum();
    pi.iter().zip(phi).map(|(p, f)| p * (f - m) * (f - m)).sum()
}

/// `Ent_π f` for a state-indexed `f ≥ 0`.
pub fn entropy_pi(pi: &[f64], f: &[f64]) -> f64 {
    let m: f64 = pi.iter().zip(f).map(|(p, v)| p * v).sum();
    if m <= 0.0 {
        return 0.0;
    }
    m * pi.iter().zip(f).map(|(p, v)| p * phi(v / m - 1.0)).sum::<f64>()
}

fn apply(k: &Kernel, f: &[f64]) -> Vec<f64> {
    let v = &k.p * DVector::from_column_slice(f);
    v.as_slice().to_vec()
}

/// Below `ENT_FLOOR · E_π f`, rounding in `Pf` (about `E_π f · ε²`) swamps
/// `Ent_π f` and the ratio carries no information.
pub const ENT_FLOOR: f64 = 1e-20;

fn resolved(pi: &[f64], f: &[f64], e0: f64) -> bool {
    let m: f64 = pi.iter().zip(f).map(|(p, v)| p * v).sum();
    e0 > ENT_FLOOR * m
}

/// `Ent_π[Pf] / Ent_π[f]` (0 when `Ent_π f` is below the rounding floor).
pub fn mlsi_ratio(k: &Kernel, f: &[f64]) -> f64 {
    let e0 = entropy_pi(&k.pi, f);
    if !resolved(&k.pi, f, e0) {
        return 0.0;
    }
    entropy_pi(&k.pi, &apply(k, f)) / e0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlsiEstimate {
    /// `1 - best ratio`; the true coefficient is at most this value.
    pub upper: f64,
    pub witness_f: Vec<f64>,
    pub restarts_used: usize,
    pub best_restart: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlsiOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MlsiOptions {
    fn default() -> Self {
        Self { restarts: 50, max_iter: 5000, grad_tol: 1e-10 }
    }
}

/// Ratio and its gradient in the log-parametrization `f = exp θ`.
fn ratio_and_grad(k: &Kernel, theta: &[f64]) -> (f64, Vec<f64>) {
    let f = exp_normalized(theta);
    let pi = &k.pi;
    let e0 = entropy_pi(pi, &f);
    let g = apply(k, &f);
    let e1 = entropy_pi(pi, &g);
    if !resolved(pi, &f, e0) {
        return (0.0, vec![0.0; f.len()]);
    }
    let r = e1 / e0;
    let m: f64 = pi.iter().zip(&f).map(|(p, v)| p * v).sum();
    let lm = m.ln();
    // d Ent[Pf] / d f(y) = Σ_x π(x) P(x,y) lg(x) = π(y) (P lg)(y) by reversibility.
    let lg: Vec<f64> = g.iter().map(|v| v.max(1e-300).ln() - lm).collect();
    let back = apply(k, &lg);
    let grad = (0..f.len())
        .map(|x| {
            let d1 = pi[x] * back[x];
            let d0 = pi[x] * (f[x].max(1e-300).ln() - lm);
            f[x] * (d1 - r * d0) / e0
        })
        .collect();
    (r, grad)
}

/// Armijo gradient ascent on `obj(θ) -> (value, ∇_θ value)`, with `θ`
/// re-centred so that `max θ = 0` after each step.
pub fn log_ascent(
    obj: &(dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync),
    mut theta: Vec<f64>,
    opts: &MlsiOptions,
) -> (f64, Vec<f64>) {
    let (mut r, mut g) = obj(&theta);
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let gn2: f64 = g.iter().map(|x| x * x).sum();
        if gn2.sqrt() < opts.grad_tol {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(&g).map(|(t, d)| t + step * d).collect();
            let (rt, gt) = obj(&trial);
            if rt >= r + 1e-4 * step * gn2 {
                theta = trial;
                r = rt;
                g = gt;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let top = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        theta.iter_mut().for_each(|t| *t = (*t - top).max(-700.0));
    }
    (r, theta)
}

/// `exp(θ - max θ)`.
pub fn exp_normalized(theta: &[f64]) -> Vec<f64> {
    let top = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    theta.iter().map(|t| (t - top).exp()).collect()
}

/// Adversarial search for `sup_f Ent[Pf]/Ent[f]` by gradient ascent in `log f`
/// with seeded restarts; returns the implied upper bound on the MLSI coefficient.
pub fn mlsi_adversarial(k: &Kernel, opts: &MlsiOptions, seed: u64) -> Result<MlsiEstimate> {
    check_kernel(k)?;
    let n = k.len();
    if n == 1 {
        return Err(Error::DegenerateEntropy);
    }
    let spec = spectral_gap(k)?;
    let wmax = spec.witness.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let starts: Vec<Vec<f64>> = (0..opts.restarts)
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            match r {
                0 => spec.witness.iter().map(|w| (w * w + 0.01).ln()).collect(),
                1 => spec.witness.iter().map(|w| (1.0 + 0.5 * w / wmax).ln()).collect(),
                2 => spec.witness.iter().map(|w| (1.0 + 1e-3 * w / wmax).ln()).collect(),
                _ if r % 3 == 0 => {
                    let x = g.random_range(0..n);
                    let depth: f64 = g.random_range(2.0..30.0);
                    (0..n).map(|y| if y == x { 0.0 } else { -depth }).collect()
                }
                _ => {
                    let s: f64 = g.random_range(0.1..10.0);
                    (0..n).map(|_| s * g.sample::<f64, _>(StandardNormal)).collect()
                }
            }
        })
        .collect();
    let obj = |t: &[f64]| ratio_and_grad(k, t);
    let runs: Vec<(f64, Vec<f64>)> = starts.into_par_iter().map(|t| log_ascent(&obj, t, opts)).collect();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, (r, _)) in runs.iter().enumerate() {
        if *r > best.1 {
            best = (i, *r);
        }
    }
    let f = exp_normalized(&runs[best.0].1);
    let ratio = mlsi_ratio(k, &f);
    Ok(MlsiEstimate { upper: (1.0 - ratio).clamp(0.0, 1.0), witness_f: f, restarts_used: opts.restarts, best_restart: best.0 })
}

/// `A = Σ_k w_k (diag ν_k - ν_k ν_kᵀ)` over kernel states.
fn expected_cov_form(k: &Kernel, nu: &SpinMeasure, tau: usize) -> Result<DMatrix<f64>> {
    let ens = coord_enumerate(nu, tau, DEFAULT_BUDGET)?;
    let n = k.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (w, m) in &ens.members {
        let q = k.distribution_of(m)?;
        for x in 0..n {
            if q[x] == 0.0 {
                continue;
            }
            a[(x, x)] += w * q[x];
            for y in 0..n {
                a[(x, y)] -= w * q[x] * q[y];
            }
        }
    }
    Ok(a)
}

/// Smallest eigenvalue of the pencil `(A, B)` on the complement of constants,
/// with `B = diag π - ππᵀ`, by Cholesky whitening of `B`.
pub fn generalized_min_eigen(a: &DMatrix<f64>, pi: &[f64]) -> Result<f64> {
    let n = pi.len();
    if n < 2 {
        return Ok(1.0);
    }
    let b = DMatrix::from_fn(n, n, |x, y| if x == y { pi[x] } else { 0.0 } - pi[x] * pi[y]);
    // Orthonormal basis of 1^⊥.
    let ones = DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt());
    let (vals, vecs) = sym_eigen(&(&ones * ones.transpose()));
    let q = vecs.columns(0, n - 1).into_owned();
    debug_assert!(vals[n - 2].abs() < 1e-12);
    let br = q.transpose() * &b * &q;
    let ar = q.transpose() * a * &q;
    let l = br
        .clone()
        .cholesky()
        .ok_or_else(|| Error::PreconditionViolated("variance form is not positive definite".into()))?
        .l();
    let linv = l.clone().try_inverse().expect("triangular factor is invertible");
    let m = &linv * ar * linv.transpose();
    Ok(sym_eigen(&m).0[0])
}

/// For each `φ` (cube-indexed): Dirichlet form of the coordinate-localization
/// kernel at `τ` equals `E[Var_{ν_τ} φ]`; plus gap equals the pencil minimum.
pub fn verify_localization_gap_identity(
    nu: &SpinMeasure,
    tau: usize,
    phis: &[Vec<f64>],
    instance: &str,
) -> Result<Vec<CheckRecord>> {
    let k = kernel_from_coordinate_localization(nu, tau)?;
    let mut out: Vec<CheckRecord> = phis
        .par_iter()
        .enumerate()
        .map(|(i, phi)| {
            let lhs = dirichlet_form(&k, &k.from_cube_function(phi));
            let rhs = expected_post_localization(nu, tau, Functional::Variance(phi))?;
            Ok(CheckRecord::eq("sg_identity", &format!("{instance} phi#{i}"), lhs, rhs, 1e-10))
        })
        .collect::<Result<_>>()?;
    let a = expected_cov_form(&k, nu, tau)?;
    let gen = generalized_min_eigen(&a, &k.pi)?;
    let gap = spectral_gap(&k)?.gap;
    out.push(CheckRecord::eq("sg_generalized_eigen", instance, gap, gen, 1e-9));
    Ok(out)
}

/// For each `f ≥ 0`: `Ent_ν[Pf] ≤ Ent_ν[f] - E[Ent_{ν_τ} f]`.
pub fn verify_entropy_step_inequality(
    nu: &SpinMeasure,
    tau: usize,
    fs: &[Vec<f64>],
    instance: &str,
) -> Result<Vec<CheckRecord>> {
    let k = kernel_from_coordinate_localization(nu, tau)?;
    fs.par_iter()
        .enumerate()
        .map(|(i, f)| {
            let fs = k.from_cube_function(f);
            let lhs = entropy_pi(&k.pi, &apply(&k, &fs));
            let rhs = nu.entropy(f)? - expected_post_localization(nu, tau, Functional::Entropy(f))?;
            Ok(CheckRecord::le("ef_step", &format!("{instance} f#{i}"), lhs, rhs, 1e-10))
        })
        .collect()
}

/// `½ Σ |μ(x) - π(x)|`.
pub fn tv(mu: &[f64], pi: &[f64]) -> f64 {
    0.5 * mu.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Default cap on kernel applications in [`tv_mixing_time`].
pub const DEFAULT_MIX_CAP: usize = 1_000_000;

/// Smallest `t` with `TV(μ0 Pᵗ, π) ≤ ε`, by repeated multiplication.
pub fn tv_mixing_time(k: &Kernel, mu0: &[f64], eps: f64, cap: usize) -> Result<usize> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::PreconditionViolated(format!("eps must lie in (0, 1/2), got {eps}")));
    }
    let pt = k.p.transpose();
    let mut mu = DVector::from_column_slice(mu0);
    for t in 0..=cap {
        if tv(mu.as_slice(), &k.pi) <= eps {
            return Ok(t);
        }
        mu = &pt * mu;
    }
    Err(Error::Nonconvergence(cap))
}

/// Worst start over point masses.
pub fn worst_mixing_time(k: &Kernel, eps: f64, cap: usize) -> Result<usize> {
    let n = k.len();
    let times: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut d = vec![0.0; n];
            d[x] = 1.0;
            tv_mixing_time(k, &d, eps, cap)
        })
        .collect::<Result<_>>()?;
    Ok(times.into_iter().max().unwrap_or(0))
}

/// Measured worst-case mixing time against `gap^{-1}(log 1/η + log 1/ε)` and
/// `ρ^{-1}(log log 1/η + log 1/ε)` with `ρ` the adversarial upper estimate.
/// Both ratios are informational; the constant in front is unspecified.
pub fn fact_mixing_consistency(k: &Kernel, eps: f64, mlsi_upper: Option<f64>, instance: &str) -> Result<Vec<CheckRecord>> {
    let t = worst_mixing_time(k, eps, DEFAULT_MIX_CAP)? as f64;
    let gap = spectral_gap(k)?.gap;
    let eta = k.pi.iter().cloned().fold(f64::INFINITY, f64::min);
    let gap_bound = ((1.0 / eta).ln() + (1.0 / eps).ln()) / gap;
    let mut out = vec![CheckRecord::info("tmix_gap_ratio", instance, t, gap_bound)];
    if let Some(rho) = mlsi_upper {
        let ll = (1.0 / eta).ln().max(1.0 + 1e-12).ln().max(0.0);
        out.push(CheckRecord::info("tmix_mlsi_ratio", instance, t, (ll + (1.0 / eps).ln()) / rho));
    }
    Ok(out)
}
