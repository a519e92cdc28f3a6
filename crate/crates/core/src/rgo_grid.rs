//! Restricted Gaussian dynamics on grid discretizations of one-dimensional
//! strongly log-concave densities.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, Support};
use crate::linalg::sym_eigen;
use crate::report::{tightest, CheckRecord};
use crate::spectra::{mlsi_adversarial, spectral_gap, MlsiOptions};

/// Smallest admissible grid.
pub const MIN_POINTS: usize = 64;
/// Largest admissible truncated tail mass.
pub const MAX_TAIL: f64 = 1e-10;
pub const DEFAULT_NODES: usize = 64;
/// Largest admissible row-sum residual before renormalization.
pub const QUADRATURE_TOL: f64 = 1e-8;

/// Probability vector `∝ exp(-V)` on an equispaced grid, with the convexity
/// modulus it was checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    pub points: Vec<f64>,
    pub h: f64,
    pub weights: Vec<f64>,
    pub potential: Vec<f64>,
    pub mu: f64,
}

impl GridMeasure {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| x * w).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Malformed(e.to_string());
        wr.write_record(["x", "weight", "potential"]).map_err(err)?;
        for k in 0..self.len() {
            wr.write_record([
                format!("{:e}", self.points[k]),
                format!("{:e}", self.weights[k]),
                format!("{:e}", self.potential[k]),
            ])
            .map_err(err)?;
        }
        wr.flush().map_err(|e| Error::Malformed(e.to_string()))
    }
}

/// `∫_d^∞ e^{-μ s²/2} ds <= e^{-μ d²/2} / (μ d)` for `d > 0`.
fn gaussian_tail(mu: f64, d: f64) -> f64 {
    if d <= 0.0 {
        f64::INFINITY
    } else {
        (-0.5 * mu * d * d).exp() / (mu * d)
    }
}

/// Samples `V` on `m` equispaced points of `[a, b]` and checks the second
/// differences against `mu` and the Gaussian-envelope tail beyond the interval.
pub fn discretize(v: &dyn Fn(f64) -> f64, mu: f64, interval: (f64, f64), m: usize) -> Result<GridMeasure> {
    let (a, b) = interval;
    if m < MIN_POINTS || !(b > a) || !(mu > 0.0) {
        return Err(Error::PreconditionViolated(format!(
            "need at least {MIN_POINTS} points, a < b and mu > 0 (m = {m}, [{a}, {b}], mu = {mu})"
        )));
    }
    let h = (b - a) / (m - 1) as f64;
    let points: Vec<f64> = (0..m).map(|k| a + k as f64 * h).collect();
    let potential: Vec<f64> = points.iter().map(|&x| v(x)).collect();
    if potential.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("potential"));
    }
    // Rounding in second differences grows like |V| eps / h².
    let vmax = potential.iter().fold(0.0_f64, |s, p| s.max(p.abs()));
    let tol_curv = 1e-6 * mu.max(1.0) + 64.0 * f64::EPSILON * vmax / (h * h);
    for k in 1..m - 1 {
        let d2 = (potential[k - 1] - 2.0 * potential[k] + potential[k + 1]) / (h * h);
        if d2 < mu - tol_curv {
            return Err(Error::NotStronglyConvex(k));
        }
    }
    let (kstar, vmin) = potential
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &p)| if p < acc.1 { (k, p) } else { acc });
    let raw: Vec<f64> = potential.iter().map(|p| (vmin - p).exp()).collect();
    let z: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|r| r / z).collect();
    // Density at the mode times the envelope mass outside [a, b].
    let xs = points[kstar];
    let peak = weights[kstar] / h;
    let tail = peak * (gaussian_tail(mu, b - xs) + gaussian_tail(mu, xs - a));
    if tail > MAX_TAIL {
        return Err(Error::TailMass(tail));
    }
    Ok(GridMeasure { points, h, weights, potential, mu })
}

/// Discretized `N(0, 1/μ)` on `±8/√μ`.
pub fn gaussian_grid(mu: f64, m: usize) -> Result<GridMeasure> {
    let r = 8.0 / mu.sqrt();
    discretize(&|x| 0.5 * mu * x * x, mu, (-r, r), m)
}

/// Gauss–Hermite rule for the weight `e^{-t²}` via the Golub–Welsch
/// eigenproblem: nodes ascending, weights summing to `√π`.
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(nodes, nodes, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let (vals, vecs) = sym_eigen(&jac);
    let sp = std::f64::consts::PI.sqrt();
    let w = (0..nodes).map(|k| sp * vecs[(0, k)] * vecs[(0, k)]).collect();
    (vals, w)
}

/// Restricted Gaussian dynamics kernel: from `x`, `y ~ N(x, η)`, then `z` from
/// `ν` reweighted by `exp(-|z - y|²/(2η))`. The `y` integral uses
/// `DEFAULT_NODES`-point Gauss–Hermite quadrature centred at `x`.
///
/// Quadrature error is absolute, so an entry into a state far less likely than
/// its source is resolved poorly. Each off-diagonal pair therefore keeps the
/// entry from the less likely endpoint and rebuilds the reverse entry by
/// detailed balance; the diagonal takes what is left. The result is exactly
/// reversible, which the entropy-ratio adversary relies on in the tails.
pub fn rgd_kernel(gm: &GridMeasure, eta: f64) -> Result<Kernel> {
    rgd_kernel_with_nodes(gm, eta, DEFAULT_NODES)
}

pub fn rgd_kernel_with_nodes(gm: &GridMeasure, eta: f64, nodes: usize) -> Result<Kernel> {
    if !(eta > 0.0) {
        return Err(Error::PreconditionViolated(format!("eta must be positive, got {eta}")));
    }
    let (t, w) = gauss_hermite(nodes);
    let m = gm.len();
    let logw: Vec<f64> = gm.weights.iter().map(|p| p.ln()).collect();
    let scale = (2.0 * eta).sqrt();
    let norm = std::f64::consts::PI.sqrt();
    let rows: Vec<Vec<f64>> = gm
        .points
        .par_iter()
        .map(|&x| {
            let mut row = vec![0.0; m];
            let mut s = vec![0.0; m];
            for (ti, wi) in t.iter().zip(&w) {
                let y = x + scale * ti;
                let mut top = f64::NEG_INFINITY;
                for (k, sk) in s.iter_mut().enumerate() {
                    let d = gm.points[k] - y;
                    *sk = logw[k] - d * d / (2.0 * eta);
                    top = top.max(*sk);
                }
                let mut z = 0.0;
                for sk in s.iter_mut() {
                    *sk = (*sk - top).exp();
                    z += *sk;
                }
                let c = wi / norm / z;
                for (r, sk) in row.iter_mut().zip(&s) {
                    *r += c * sk;
                }
            }
            row
        })
        .collect();
    let mut residual = 0.0_f64;
    for row in &rows {
        residual = residual.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    if residual > QUADRATURE_TOL {
        return Err(Error::QuadratureFailure(residual));
    }
    let pi = &gm.weights;
    let mut p = DMatrix::<f64>::zeros(m, m);
    for x in 0..m {
        for z in x + 1..m {
            let (lo, hi) = if pi[x] <= pi[z] { (x, z) } else { (z, x) };
            let flow = pi[lo] * rows[lo][hi];
            p[(lo, hi)] = rows[lo][hi];
            p[(hi, lo)] = flow / pi[hi];
        }
    }
    for x in 0..m {
        let off: f64 = p.row(x).iter().sum();
        p[(x, x)] = 1.0 - off;
        if p[(x, x)] < -QUADRATURE_TOL {
            return Err(Error::QuadratureFailure(-p[(x, x)]));
        }
        p[(x, x)] = p[(x, x)].max(0.0);
    }
    Ok(Kernel { support: Support::Grid { points: gm.points.clone() }, pi: gm.weights.clone(), p })
}

/// `ημ / (1 + ημ)`, equal to `μ / (μ + 1/η)`.
pub fn rgo_bound(mu: f64, eta: f64) -> f64 {
    eta * mu / (1.0 + eta * mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgoReport {
    pub mu: f64,
    pub eta: f64,
    pub points: usize,
    pub bound: f64,
    pub gap: f64,
    pub mlsi_upper: Option<f64>,
    /// `|gap(m) - gap(2m - 1)|` on the same interval.
    pub refinement_delta: f64,
    /// Ten times the refinement delta.
    pub slack: f64,
    pub checks: Vec<CheckRecord>,
}

/// Gap and (optionally) adversarial MLSI upper estimate of the kernel against
/// the lower bound `μ/(μ + 1/η)`, with slack from one grid refinement.
pub fn rgo_mlsi_check(
    v: &dyn Fn(f64) -> f64,
    mu: f64,
    interval: (f64, f64),
    m: usize,
    eta: f64,
    mlsi: Option<(&MlsiOptions, u64)>,
) -> Result<RgoReport> {
    let gm = discretize(v, mu, interval, m)?;
    let k = rgd_kernel(&gm, eta)?;
    let gap = spectral_gap(&k)?.gap;
    let fine = discretize(v, mu, interval, 2 * m - 1)?;
    let refinement_delta = (spectral_gap(&rgd_kernel(&fine, eta)?)?.gap - gap).abs();
    let slack = 10.0 * refinement_delta;
    let bound = rgo_bound(mu, eta);
    let instance = format!("rgo mu={mu} eta={eta} m={m}");
    let mut checks = vec![
        CheckRecord::le("rgo_detailed_balance", &instance, k.detailed_balance_error(), 0.0, 1e-8),
        CheckRecord::le("rgo_gap_bound", &instance, bound, gap + slack, 1e-12),
    ];
    let mlsi_upper = match mlsi {
        Some((opts, seed)) => {
            let u = mlsi_adversarial(&k, opts, seed)?.upper;
            checks.push(CheckRecord::le("rgo_mlsi_bound", &instance, bound, u + slack, 1e-12));
            Some(u)
        }
        None => None,
    };
    Ok(RgoReport { mu, eta, points: m, bound, gap, mlsi_upper, refinement_delta, slack, checks })
}

/// `D_KL(ρ ‖ π)`.
pub fn kl_grid(rho: &[f64], pi: &[f64]) -> f64 {
    rho.iter().zip(pi).map(|(r, p)| if *r > 0.0 { r * (r / p).ln() } else { 0.0 }).sum()
}

/// Warm starts with density ratio at most `e^{log_ratio}`: the right half of
/// the grid, a linear tilt, and a bump at each quartile.
pub fn warm_starts(gm: &GridMeasure, log_ratio: f64) -> Vec<Vec<f64>> {
    let m = gm.len();
    let normalize = |g: Vec<f64>| {
        let s: f64 = g.iter().sum();
        g.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    let mut out = Vec::new();
    out.push(normalize((0..m).map(|k| if k >= m / 2 { gm.weights[k] } else { 0.0 }).collect()));
    let (lo, hi) = (gm.points[0], gm.points[m - 1]);
    let tilt = |x: f64| log_ratio * (x - lo) / (hi - lo);
    out.push(normalize(gm.points.iter().zip(&gm.weights).map(|(&x, w)| w * tilt(x).exp()).collect()));
    let sd = gm.points.iter().zip(&gm.weights).map(|(x, w)| w * (x - gm.mean()).powi(2)).sum::<f64>().sqrt();
    for q in [0.25, 0.5, 0.75] {
        let c = lo + q * (hi - lo) * 0.5 + 0.25 * (hi - lo);
        let bump = |x: f64| log_ratio * (-((x - c) / sd).powi(2)).exp();
        out.push(normalize(gm.points.iter().zip(&gm.weights).map(|(&x, w)| w * bump(x).exp()).collect()));
    }
    out
}

/// Iterates `ρ ← ρP` and checks `KL(ρ_t) <= (1 - rate)^t KL(ρ_0) (1 + slack)`.
/// One record per start, at its tightest step.
pub fn kl_decay_check(k: &Kernel, starts: &[Vec<f64>], rate: f64, slack: f64, iters: usize, instance: &str) -> Vec<CheckRecord> {
    let pt = k.p.transpose();
    starts
        .iter()
        .enumerate()
        .filter_map(|(s, rho0)| {
            let kl0 = kl_grid(rho0, &k.pi);
            let mut rho = DVector::from_column_slice(rho0);
            let mut recs = Vec::with_capacity(iters);
            for t in 1..=iters {
                rho = &pt * rho;
                let kl = kl_grid(rho.as_slice(), &k.pi);
                let envelope = (1.0 - rate).powi(t as i32) * kl0 * (1.0 + slack);
                recs.push(CheckRecord::le("rgo_kl_decay", &format!("{instance} start#{s} t={t}"), kl, envelope, 1e-14));
            }
            tightest(recs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_moments() {
        let (t, w) = gauss_hermite(64);
        let sp = std::f64::consts::PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = t.iter().zip(&w).map(|(t, w)| w * t * t).sum();
        let m4: f64 = t.iter().zip(&w).map(|(t, w)| w * t.powi(4)).sum();
        assert!((m0 - sp).abs() < 1e-12);
        assert!((m2 - sp / 2.0).abs() < 1e-12);
        assert!((m4 - 0.75 * sp).abs() < 1e-12);
    }

    #[test]
    fn gaussian_grid_has_zero_mean() {
        let gm = gaussian_grid(1.0, 129).unwrap();
        assert!(gm.mean().abs() < 1e-14);
        assert!((gm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kink_passes_curvature() {
        assert!(discretize(&|x: f64| 0.5 * x * x + x.abs(), 1.0, (-8.0, 8.0), 200).is_ok());
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(discretize(&|x: f64| 0.5 * x * x, 2.0, (-8.0, 8.0), 100), Err(Error::NotStronglyConvex(_))));
        assert!(matches!(discretize(&|x: f64| 0.5 * x * x, 1.0, (-2.0, 2.0), 100), Err(Error::TailMass(_))));
        assert!(discretize(&|x: f64| x * x, 1.0, (-8.0, 8.0), 10).is_err());
    }

    #[test]
    fn vanishing_step_is_nearly_identity() {
        let gm = gaussian_grid(1.0, 256).unwrap();
        let k = rgd_kernel(&gm, 1e-4).unwrap();
        let min_diag = (0..k.len()).map(|x| k.p[(x, x)]).fold(1.0, f64::min);
        assert!(min_diag >= 0.99, "{min_diag}");
    }

    #[test]
    fn gaussian_gap_matches_autoregression() {
        let gm = gaussian_grid(1.0, 256).unwrap();
        let k = rgd_kernel(&gm, 1.0).unwrap();
        assert!(k.detailed_balance_error() < 1e-8);
        let gap = spectral_gap(&k).unwrap().gap;
        assert!((gap - 0.5).abs() < 1e-3, "{gap}");
    }
}
