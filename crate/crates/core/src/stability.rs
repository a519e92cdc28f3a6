//! Certifiers for spectral independence under pinnings, correlation bounds
//! under tilts, entropic stability (quadratic and H-divergence), tame and
//! bounded marginals, and numeric checks of the supporting inequalities.
//!
//! Pinning-quantified conditions are certified exactly by enumeration.
//! Tilt-quantified conditions are estimated by a radial scan plus local ascent,
//! so their constants are lower estimates of the true supremum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_max, sqrt_psd};
use crate::measure::{kl, SpinMeasure};
use crate::report::CheckRecord;
use crate::rng;

/// Default cap on `6^f`, the work of enumerating every pinning by restriction.
pub const DEFAULT_PIN_BUDGET: u128 = 400_000_000;

/// Below this tilt norm the divergence ratio uses its quadratic limit.
pub const SMALL_TILT: f64 = 1e-3;

const DEGENERATE: f64 = 1e-12;

/// `Φ(s) = (1+s) log(1+s) - s`, with `Φ(-1) = 1`.
pub fn phi(s: f64) -> f64 {
    crate::measure::phi(s)
}

fn h_term(x: f64, y: f64) -> f64 {
    let part = |a: f64, b: f64| if a <= 0.0 { 0.0 } else { a / 2.0 * (a / b).ln() };
    part(1.0 + x, 1.0 + y) + part(1.0 - x, 1.0 - y)
}

/// `H(x, y) = Σ_{|y_i|<1} [(1+x_i)/2 log((1+x_i)/(1+y_i)) + (1-x_i)/2 log((1-x_i)/(1-y_i))]`.
pub fn h_divergence(x: &[f64], y: &[f64]) -> Result<f64> {
    assert_eq!(x.len(), y.len());
    let mut acc = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        for v in [a, b] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::DomainError(v));
            }
        }
        if b.abs() < 1.0 {
            acc += h_term(a, b);
        }
    }
    Ok(acc)
}

/// Worst-case records for the scalar comparisons between `H` and `Φ` on a
/// `points`-node grid per variable (`y` excludes the endpoints).
///
/// Each record holds the pair attaining the smallest margin.
pub fn lemma_hphi_check(points: usize) -> Vec<CheckRecord> {
    let grid: Vec<f64> = (0..points).map(|k| -1.0 + 2.0 * k as f64 / (points - 1) as f64).collect();
    let ys = &grid[1..points - 1];
    let mid = |x: f64, y: f64, e: f64| e * (1.0 + y) * phi((x - y) / (e * (1.0 + y)));
    // Returns (y, lhs, rhs, x) at the smallest margin rhs - lhs.
    let worst = |f: &(dyn Fn(f64, f64) -> (f64, f64) + Sync)| -> (f64, f64, f64, f64) {
        let pick = |a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)| if b.2 - b.1 < a.2 - a.1 { b } else { a };
        let rows: Vec<(f64, f64, f64, f64)> = grid
            .par_iter()
            .map(|&x| {
                ys.iter().fold((0.0, 0.0, f64::INFINITY, x), |best, &y| {
                    let (l, r) = f(x, y);
                    pick(best, (y, l, r, x))
                })
            })
            .collect();
        rows.into_iter().fold((0.0, 0.0, f64::INFINITY, 0.0), pick)
    };
    let mut out = Vec::new();
    let mut push = |name: &str, inst: String, w: (f64, f64, f64, f64)| {
        let (y, l, r, x) = w;
        out.push(CheckRecord::le(name, &format!("{inst} x={x:.4} y={y:.4}"), l, r, 1e-12));
    };
    push("hphi_lower", format!("grid={points}"), worst(&|x, y| (0.5 * h_term(x, y), mid(x, y, 1.0))));
    push("hphi_upper", format!("grid={points}"), worst(&|x, y| (mid(x, y, 1.0), 2.0 * h_term(x, y))));
    for e in [1.0, 2.0, 5.0, 10.0] {
        push("hphi_scaled", format!("eps={e} grid={points}"), worst(&|x, y| (h_term(x, y) / (4.0 * e), mid(x, y, e))));
    }
    let s_worst = grid
        .iter()
        .map(|&s| (phi(s) / 3.0, phi(s.abs()), s))
        .fold((0.0, f64::INFINITY, 0.0), |a, b| if b.1 - b.0 < a.1 - a.0 { b } else { a });
    out.push(CheckRecord::le("hphi_abs", &format!("grid={points} s={:.4}", s_worst.2), s_worst.0, s_worst.1, 1e-12));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertKind {
    SiPinnings,
    CorTilts,
    EntStabQuad,
    EntStabH,
    TameMarginals,
    BoundedMarginals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    None,
    Pinning { u: Vec<i8> },
    Tilt { v: Vec<f64> },
    /// Quadratic limit of the divergence ratio as the tilt shrinks along `direction`.
    SmallTilt { direction: Vec<f64> },
    PinPair { u: Vec<i8>, w: Vec<i8>, coord: usize },
}

/// Scan provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMeta {
    /// `true` when the constant is exact (finite enumeration).
    pub exact: bool,
    pub evaluations: usize,
    pub radii: Vec<f64>,
    pub directions: usize,
    pub ascent_steps: usize,
}

impl ScanMeta {
    fn exact(evaluations: usize) -> Self {
        Self { exact: true, evaluations, radii: vec![], directions: 0, ascent_steps: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kind: CertKind,
    pub constant: f64,
    pub witness: Witness,
    pub scan: ScanMeta,
    /// Per-level maxima, level `i` = number of pinned coordinates (pinning certificates only).
    pub levels: Vec<f64>,
    pub claimed: Option<f64>,
    pub pass: Option<bool>,
}

impl Certificate {
    /// Compares against a claimed bound; `lower` flips the direction for
    /// min-type constants.
    pub fn with_claim(mut self, claimed: f64, lower: bool) -> Self {
        self.claimed = Some(claimed);
        self.pass = Some(if lower { self.constant >= claimed - 1e-12 } else { self.constant <= claimed + 1e-12 });
        self
    }
}

/// Free coordinates of `nu` as pinning vectors, in ternary order: digit `j`
/// (0 free, 1 minus, 2 plus) refers to `nu.free()[j]`.
pub fn pinning_from_index(nu: &SpinMeasure, mut idx: usize) -> Vec<i8> {
    let mut u = vec![0i8; nu.n()];
    for &i in nu.free() {
        u[i] = match idx % 3 {
            0 => 0,
            1 => -1,
            _ => 1,
        };
        idx /= 3;
    }
    u
}

/// Mass and center of mass of every pinning of `nu`, by a ternary zeta transform.
#[derive(Debug, Clone)]
pub struct PinTable {
    pub f: usize,
    pub mass: Vec<f64>,
    /// `b[idx * f + j]` is the mean of free coordinate `j` under pinning `idx`.
    pub b: Vec<f64>,
}

impl PinTable {
    pub fn new(nu: &SpinMeasure, budget: u128) -> Result<Self> {
        let f = nu.num_free();
        let size = 3usize.pow(f as u32);
        let needed = size as u128 * (f as u128 + 1);
        if needed > budget {
            return Err(Error::BudgetExceeded { needed, budget });
        }
        let stride = f + 1;
        let mut acc = vec![0.0; size * stride];
        for (a, &w) in nu.weights().iter().enumerate() {
            let mut idx = 0;
            let mut p = 1;
            for j in 0..f {
                idx += p * if a >> j & 1 == 1 { 2 } else { 1 };
                p *= 3;
            }
            acc[idx * stride] = w;
            for j in 0..f {
                acc[idx * stride + 1 + j] = w * if a >> j & 1 == 1 { 1.0 } else { -1.0 };
            }
        }
        let mut p = 1;
        for _ in 0..f {
            for idx in 0..size {
                if (idx / p) % 3 == 0 {
                    for k in 0..stride {
                        acc[idx * stride + k] = acc[(idx + p) * stride + k] + acc[(idx + 2 * p) * stride + k];
                    }
                }
            }
            p *= 3;
        }
        let mut mass = vec![0.0; size];
        let mut b = vec![0.0; size * f];
        for idx in 0..size {
            let m = acc[idx * stride];
            mass[idx] = m;
            if m > 0.0 {
                for j in 0..f {
                    b[idx * f + j] = (acc[idx * stride + 1 + j] / m).clamp(-1.0, 1.0);
                }
            }
        }
        Ok(Self { f, mass, b })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Ternary digit of free coordinate `j` in pinning `idx`.
    pub fn digit(idx: usize, j: usize) -> usize {
        (idx / 3usize.pow(j as u32)) % 3
    }

    pub fn mean(&self, idx: usize, j: usize) -> f64 {
        self.b[idx * self.f + j]
    }
}

fn lex_less(a: &[i8], b: &[i8]) -> bool {
    a < b
}

/// `max_u ρ(Ψ(R_u ν))` over every pinning of the free coordinates, with
/// deterministic coordinates collapsed.
pub fn si_all_pinnings(nu: &SpinMeasure, budget: u128) -> Result<Certificate> {
    let f = nu.num_free();
    let needed = 6u128.pow(f as u32);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let table = PinTable::new(nu, u128::MAX)?;
    let rows: Vec<Option<(f64, usize, Vec<i8>)>> = (0..table.len())
        .into_par_iter()
        .map(|idx| {
            if table.mass[idx] <= 0.0 {
                return None;
            }
            let u = pinning_from_index(nu, idx);
            let level = u.iter().filter(|s| **s != 0).count();
            let pinned = nu.pin(&u).expect("positive-mass pinning");
            Some((pinned.si_radius(), level, u))
        })
        .collect();
    let mut levels = vec![0.0_f64; f + 1];
    let mut best: Option<(f64, Vec<i8>)> = None;
    for (rho, level, u) in rows.into_iter().flatten() {
        levels[level] = levels[level].max(rho);
        let better = match &best {
            None => true,
            Some((b, w)) => rho > *b || (rho == *b && lex_less(&u, w)),
        };
        if better {
            best = Some((rho, u));
        }
    }
    let (constant, u) = best.expect("the empty pinning has positive mass");
    Ok(Certificate {
        kind: CertKind::SiPinnings,
        constant,
        witness: Witness::Pinning { u },
        scan: ScanMeta::exact(table.len()),
        levels,
        claimed: None,
        pass: None,
    })
}

/// Radial tilt scan: every radius times `directions` seeded unit directions,
/// followed by coordinate pattern ascent from the best `restarts` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltScan {
    pub radii: Vec<f64>,
    pub directions: usize,
    pub seed: u64,
    pub ascent_steps: usize,
    pub restarts: usize,
    /// Coordinates of tilts are confined to `[-max_tilt, max_tilt]`.
    pub max_tilt: f64,
}

impl Default for TiltScan {
    fn default() -> Self {
        Self {
            radii: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            directions: 200,
            seed: 0,
            ascent_steps: 200,
            restarts: 3,
            max_tilt: 40.0,
        }
    }
}

impl TiltScan {
    /// Smaller scan for exhaustive per-pinning work.
    pub fn light(seed: u64) -> Self {
        Self { radii: vec![0.5, 1.0, 2.0, 4.0], directions: 24, seed, ascent_steps: 60, restarts: 1, max_tilt: 40.0 }
    }

    /// Unit direction `k` in dimension `n`; independent of the scan size.
    pub fn direction(&self, n: usize, k: usize) -> Vec<f64> {
        let mut g = rng::stream(self.seed, k as u64);
        loop {
            let d: Vec<f64> = (0..n).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return d.iter().map(|x| x / norm).collect();
            }
        }
    }

    fn points(&self, n: usize) -> Vec<Vec<f64>> {
        let dirs: Vec<Vec<f64>> = (0..self.directions).map(|k| self.direction(n, k)).collect();
        let mut pts = Vec::with_capacity(self.radii.len() * dirs.len());
        for r in &self.radii {
            for d in &dirs {
                pts.push(d.iter().map(|x| (x * r).clamp(-self.max_tilt, self.max_tilt)).collect());
            }
        }
        pts
    }

    fn meta(&self, evaluations: usize) -> ScanMeta {
        ScanMeta {
            exact: false,
            evaluations,
            radii: self.radii.clone(),
            directions: self.directions,
            ascent_steps: self.ascent_steps,
        }
    }
}

/// Maximizes `g` over the scan points and refines by pattern search.
/// Returns (value, argmax, evaluations).
fn scan_max(n: usize, scan: &TiltScan, g: &(dyn Fn(&[f64]) -> f64 + Sync)) -> (f64, Vec<f64>, usize) {
    let pts = scan.points(n);
    let vals: Vec<f64> = pts.par_iter().map(|v| g(v)).collect();
    let mut order: Vec<usize> = (0..pts.len()).filter(|&k| vals[k].is_finite()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    let mut evals = pts.len();
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    for &k in &order {
        if vals[k] > best.0 {
            best = (vals[k], pts[k].clone());
        }
    }
    let starts: Vec<Vec<f64>> = order.iter().take(scan.restarts).map(|&k| pts[k].clone()).collect();
    let refined: Vec<(f64, Vec<f64>, usize)> = starts
        .par_iter()
        .map(|v0| {
            let mut v = v0.clone();
            let mut val = g(&v);
            let mut step = 0.25 * v.iter().map(|x| x * x).sum::<f64>().sqrt().max(0.25);
            let mut count = 1;
            for _ in 0..scan.ascent_steps {
                let mut improved = false;
                for j in 0..n {
                    for s in [1.0, -1.0] {
                        let mut w = v.clone();
                        w[j] = (w[j] + s * step).clamp(-scan.max_tilt, scan.max_tilt);
                        let gv = g(&w);
                        count += 1;
                        if gv > val {
                            val = gv;
                            v = w;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step /= 2.0;
                    if step < 1e-4 {
                        break;
                    }
                }
            }
            (val, v, count)
        })
        .collect();
    for (val, v, c) in refined {
        evals += c;
        if val > best.0 {
            best = (val, v);
        }
    }
    (best.0, best.1, evals)
}

/// `‖Cor(T_v ν)‖_OP` over free, non-deterministic coordinates.
pub fn cor_norm_at(nu: &SpinMeasure, v: &[f64]) -> f64 {
    nu.tilt(v).si_radius()
}

/// Lower estimate of `sup_v ‖Cor(T_v ν)‖_OP` (includes `v = 0`).
pub fn cor_under_tilts(nu: &SpinMeasure, scan: &TiltScan) -> Certificate {
    let n = nu.n();
    let g = |v: &[f64]| cor_norm_at(nu, v);
    let (val, v, evals) = scan_max(n, scan, &g);
    let at_zero = nu.si_radius();
    let (constant, witness) = if at_zero >= val { (at_zero, vec![0.0; n]) } else { (val, v) };
    Certificate {
        kind: CertKind::CorTilts,
        constant,
        witness: Witness::Tilt { v: witness },
        scan: scan.meta(evals + 1),
        levels: vec![],
        claimed: None,
        pass: None,
    }
}

/// Divergence `ψ` in the entropic-stability ratio.
#[derive(Debug, Clone, PartialEq)]
pub enum Divergence {
    /// `ψ(x, y) = ½|C(x - y)|²`.
    Quad(DMatrix<f64>),
    H,
}

impl Divergence {
    pub fn identity(n: usize) -> Self {
        Divergence::Quad(DMatrix::identity(n, n))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Divergence::Quad(c) => {
                let d = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
                0.5 * (c * d).norm_squared()
            }
            Divergence::H => {
                let mut acc = 0.0;
                for (&a, &b) in x.iter().zip(y) {
                    if b.abs() < 1.0 - DEGENERATE {
                        acc += h_term(a.clamp(-1.0, 1.0), b);
                    }
                }
                acc
            }
        }
    }

    fn kind(&self) -> CertKind {
        match self {
            Divergence::Quad(_) => CertKind::EntStabQuad,
            Divergence::H => CertKind::EntStabH,
        }
    }

    /// Local metric `M` with `ψ(y + d, y) ≈ ½ dᵀ M d`.
    fn metric(&self, b: &[f64]) -> DMatrix<f64> {
        match self {
            Divergence::Quad(c) => c.transpose() * c,
            Divergence::H => DMatrix::from_diagonal(&DVector::from_iterator(
                b.len(),
                b.iter().map(|y| if y.abs() < 1.0 - DEGENERATE { 1.0 / (1.0 - y * y) } else { 0.0 }),
            )),
        }
    }
}

/// `ψ(b(T_v ν), b(ν)) / KL(T_v ν ‖ ν)`; the quadratic limit below [`SMALL_TILT`].
pub fn tilt_ratio(nu: &SpinMeasure, psi: &Divergence, v: &[f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < SMALL_TILT {
        return limit_ratio(nu, psi, v);
    }
    let t = nu.tilt(v);
    let d = kl(&t, nu).expect("tilts are absolutely continuous");
    if d <= 1e-300 {
        return 0.0;
    }
    psi.eval(&t.mean(), &nu.mean()) / d
}

/// `lim_{s→0} ψ(b(T_{sd} ν), b(ν)) / KL = (Cov d)ᵀ M (Cov d) / dᵀ Cov d`.
pub fn limit_ratio(nu: &SpinMeasure, psi: &Divergence, d: &[f64]) -> f64 {
    let mo = nu.moments();
    let dv = DVector::from_column_slice(d);
    let cd = &mo.cov * &dv;
    let denom = dv.dot(&cd);
    if denom <= 1e-300 {
        return 0.0;
    }
    let m = psi.metric(mo.b.as_slice());
    cd.dot(&(m * &cd)) / denom
}

/// `sup_d` of the quadratic limit: `λ_max(Cov^{1/2} M Cov^{1/2})`, with its direction.
pub fn limit_sup(nu: &SpinMeasure, psi: &Divergence) -> (f64, Vec<f64>) {
    let mo = nu.moments();
    let s = sqrt_psd(&mo.cov);
    let m = psi.metric(mo.b.as_slice());
    let q = &s * m * &s;
    let (vals, vecs) = crate::linalg::sym_eigen(&q);
    let Some(&top) = vals.last() else { return (0.0, vec![]) };
    // d with Cov^{1/2} d = w, taken in the range of Cov.
    let w = vecs.column(vals.len() - 1).into_owned();
    let (cv, cvec) = crate::linalg::sym_eigen(&mo.cov);
    let mut d = DVector::zeros(nu.n());
    for k in 0..cv.len() {
        if cv[k] > 1e-14 {
            let e = cvec.column(k);
            d += e * (e.dot(&w) / cv[k].sqrt());
        }
    }
    let norm = d.norm();
    let dir = if norm > 0.0 { (d / norm).as_slice().to_vec() } else { vec![0.0; nu.n()] };
    (top.max(0.0), dir)
}

/// Lower estimate of the entropic-stability constant `sup_v ψ(b(T_vν), b(ν)) / KL`.
pub fn entropic_stability_scan(nu: &SpinMeasure, psi: &Divergence, scan: &TiltScan) -> Certificate {
    let nu = nu.collapse_deterministic();
    let n = nu.n();
    let (lim, dir) = limit_sup(&nu, psi);
    let g = |v: &[f64]| tilt_ratio(&nu, psi, v);
    let (val, v, evals) = scan_max(n, scan, &g);
    let (constant, witness) =
        if lim >= val { (lim, Witness::SmallTilt { direction: dir }) } else { (val, Witness::Tilt { v }) };
    Certificate {
        kind: psi.kind(),
        constant,
        witness,
        scan: scan.meta(evals),
        levels: vec![],
        claimed: None,
        pass: None,
    }
}

/// Re-evaluates a tilt certificate at its witness.
pub fn reevaluate(nu: &SpinMeasure, cert: &Certificate, psi: Option<&Divergence>) -> Result<f64> {
    match (&cert.witness, cert.kind) {
        (Witness::Tilt { v }, CertKind::CorTilts) => Ok(cor_norm_at(nu, v)),
        (Witness::Tilt { v }, _) => Ok(tilt_ratio(&nu.collapse_deterministic(), psi.expect("divergence"), v)),
        (Witness::SmallTilt { direction }, _) => {
            Ok(limit_ratio(&nu.collapse_deterministic(), psi.expect("divergence"), direction))
        }
        (Witness::Pinning { u }, CertKind::SiPinnings) => Ok(nu.pin(u)?.si_radius()),
        (Witness::Pinning { u }, CertKind::BoundedMarginals) => {
            let p = nu.pin(u)?.collapse_deterministic();
            let b = p.mean();
            Ok(nu.free().iter().filter(|&&i| u[i] == 0).map(|&i| 1.0 - b[i].abs()).fold(1.0, f64::min))
        }
        (Witness::PinPair { u, w, coord }, CertKind::TameMarginals) => {
            let base = nu.pin(u)?.mean()[*coord];
            let both: Vec<i8> = u.iter().zip(w).map(|(a, b)| a + b).collect();
            let ext = nu.pin(&both)?.mean()[*coord];
            Ok(tame_ratio(ext, base).max(1.0 / (1.0 - base)))
        }
        _ => Err(Error::PreconditionViolated("witness does not match certificate kind".into())),
    }
}

fn odds(b: f64) -> f64 {
    if b >= 1.0 - DEGENERATE {
        f64::INFINITY
    } else {
        (1.0 + b) / (1.0 - b)
    }
}

/// `odds(ext) / odds(base)` with `0/0 = 1`.
fn tame_ratio(ext: f64, base: f64) -> f64 {
    let (a, b) = (odds(ext), odds(base));
    if a == 0.0 && b == 0.0 || a.is_infinite() && b.is_infinite() {
        1.0
    } else if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}

/// Tightest `K` for which `ν` has `K`-tame marginals, by a superset-max pass over
/// the pinning lattice. `K = ∞` signals failure; the witness names the pair.
pub fn tame_marginals_check(nu: &SpinMeasure, claimed: Option<f64>, budget: u128) -> Result<Certificate> {
    let table = PinTable::new(nu, budget)?;
    let f = table.f;
    let size = table.len();
    // best[idx * f + j] = (max odds over positive-mass extensions of idx, extension index).
    let mut best: Vec<(f64, usize)> = vec![(f64::NEG_INFINITY, 0); size * f];
    let mut order: Vec<usize> = (0..size).collect();
    let pinned = |idx: usize| (0..f).filter(|&j| PinTable::digit(idx, j) != 0).count();
    order.sort_by_key(|&idx| std::cmp::Reverse(pinned(idx)));
    for &idx in &order {
        if table.mass[idx] <= 0.0 {
            continue;
        }
        for j in 0..f {
            if PinTable::digit(idx, j) != 0 {
                continue;
            }
            let mut cur = (odds(table.mean(idx, j)), idx);
            let mut p = 1;
            for k in 0..f {
                if k != j && PinTable::digit(idx, k) == 0 {
                    for s in [1, 2] {
                        let child = idx + s * p;
                        let c = best[child * f + j];
                        if table.mass[child] > 0.0 && (c.0 > cur.0 || (c.0 == cur.0 && c.1 < cur.1)) {
                            cur = c;
                        }
                    }
                }
                p *= 3;
            }
            best[idx * f + j] = cur;
        }
    }
    let mut worst = (1.0_f64, Witness::None);
    for idx in 0..size {
        if table.mass[idx] <= 0.0 {
            continue;
        }
        for j in 0..f {
            if PinTable::digit(idx, j) != 0 {
                continue;
            }
            let base = table.mean(idx, j);
            let (ext_odds, ext) = best[idx * f + j];
            let ratio = tame_ratio(table.mean(ext, j), base).max(if ext_odds.is_infinite() && odds(base).is_finite() {
                f64::INFINITY
            } else {
                0.0
            });
            let lower = if base >= 1.0 - DEGENERATE { f64::INFINITY } else { 1.0 / (1.0 - base) };
            let k = ratio.max(lower);
            if k > worst.0 {
                let u = pinning_from_index(nu, idx);
                let full = pinning_from_index(nu, ext);
                let w: Vec<i8> = full.iter().zip(&u).map(|(a, b)| a - b).collect();
                worst = (k, Witness::PinPair { u, w, coord: nu.free()[j] });
            }
        }
    }
    let cert = Certificate {
        kind: CertKind::TameMarginals,
        constant: worst.0,
        witness: worst.1,
        scan: ScanMeta::exact(size),
        levels: vec![],
        claimed: None,
        pass: None,
    };
    Ok(match claimed {
        Some(k) => cert.with_claim(k, false),
        None => cert,
    })
}

/// Tightest `b` with `|b_i(R_u ν)| ≤ 1 - b` for every pinning `u` leaving `i` free.
pub fn bounded_marginals_check(nu: &SpinMeasure, claimed: Option<f64>, budget: u128) -> Result<Certificate> {
    let table = PinTable::new(nu, budget)?;
    let mut worst = (1.0_f64, Witness::None);
    for idx in 0..table.len() {
        if table.mass[idx] <= 0.0 {
            continue;
        }
        for j in 0..table.f {
            if PinTable::digit(idx, j) == 0 {
                let b = 1.0 - table.mean(idx, j).abs();
                if b < worst.0 {
                    worst = (b, Witness::Pinning { u: pinning_from_index(nu, idx) });
                }
            }
        }
    }
    let cert = Certificate {
        kind: CertKind::BoundedMarginals,
        constant: worst.0.max(0.0),
        witness: worst.1,
        scan: ScanMeta::exact(table.len()),
        levels: vec![],
        claimed: None,
        pass: None,
    };
    Ok(match claimed {
        Some(b) => cert.with_claim(b, true),
        None => cert,
    })
}

/// Smallest `C ≥ 1` with `1 - b_i(R_u ν) ≥ 1/C` for every pinning leaving `i` free.
pub fn marginals_away_from_one(nu: &SpinMeasure, budget: u128) -> Result<f64> {
    let table = PinTable::new(nu, budget)?;
    let mut c = 1.0_f64;
    for idx in 0..table.len() {
        if table.mass[idx] <= 0.0 {
            continue;
        }
        for j in 0..table.f {
            if PinTable::digit(idx, j) == 0 {
                let gap = 1.0 - table.mean(idx, j);
                c = c.max(if gap <= DEGENERATE { f64::INFINITY } else { 1.0 / gap });
            }
        }
    }
    Ok(c)
}

/// Seeded tilt grid: `count` directions at each radius.
pub fn tilt_grid(n: usize, radii: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let scan = TiltScan { radii: radii.to_vec(), directions: count, seed, ..TiltScan::default() };
    scan.points(n)
}

fn worst_record(name: &str, instance: &str, rows: Vec<(f64, f64)>, tol: f64) -> CheckRecord {
    let (l, r) = rows.into_iter().fold((0.0, 0.0), |a, b| if b.0 - b.1 > a.0 - a.1 { b } else { a });
    CheckRecord::le(name, &format!("{instance} worst-of-scan"), l, r, tol)
}

/// Center-of-mass displacement under tilts:
/// `|b(T_v ν) - b(ν)|² ≤ 16α²|v|²`, and with tame constants `(K, C)`
/// `<v, b(T_v ν) - b(ν)> ≤ 4αK³C Σ(1 + b_i)v_i² e^{4|v_i|}`.
pub fn lemma_sitoei_check(
    nu: &SpinMeasure,
    alpha: f64,
    tame: Option<(f64, f64)>,
    vs: &[Vec<f64>],
    instance: &str,
) -> Vec<CheckRecord> {
    let b0 = nu.mean();
    let rows: Vec<(f64, f64, f64, f64)> = vs
        .par_iter()
        .map(|v| {
            let b = nu.tilt(v).mean();
            let d: Vec<f64> = b.iter().zip(&b0).map(|(x, y)| x - y).collect();
            let lhs1 = d.iter().map(|x| x * x).sum::<f64>();
            let rhs1 = 16.0 * alpha * alpha * v.iter().map(|x| x * x).sum::<f64>();
            let lhs2 = v.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
            let rhs2 = match tame {
                Some((k, c)) => {
                    4.0 * alpha
                        * k.powi(3)
                        * c
                        * v.iter().zip(&b0).map(|(vi, bi)| (1.0 + bi) * vi * vi * (4.0 * vi.abs()).exp()).sum::<f64>()
                }
                None => f64::INFINITY,
            };
            (lhs1, rhs1, lhs2, rhs2)
        })
        .collect();
    let mut out = vec![worst_record("sitoei_displacement", instance, rows.iter().map(|r| (r.0, r.1)).collect(), 1e-12)];
    if tame.is_some() {
        out.push(worst_record("sitoei_weighted", instance, rows.iter().map(|r| (r.2, r.3)).collect(), 1e-12));
    }
    out
}

/// Displacement-to-KL conversion: hypothesis `|Δb|² ≤ ε²|v|²` on the grid implies
/// `|Δb|² ≤ ε KL`; hypothesis `<v, Δb> ≤ Σ ε_i v_i² e^{4|v_i|}` with
/// `2 ≤ ε_i ≤ C(1 + b_i)` implies `H(b(T_vν), b(ν)) ≤ 192 C KL`.
pub fn lemma_llentdelta_check(
    nu: &SpinMeasure,
    eps: f64,
    eps_i: Option<&[f64]>,
    vs: &[Vec<f64>],
    instance: &str,
) -> Vec<CheckRecord> {
    let b0 = nu.mean();
    let c = eps_i.map(|e| {
        e.iter()
            .zip(&b0)
            .map(|(ei, bi)| if 1.0 + bi > DEGENERATE { ei.max(2.0) / (1.0 + bi) } else { 0.0 })
            .fold(1.0_f64, f64::max)
    });
    let rows: Vec<[f64; 8]> = vs
        .par_iter()
        .map(|v| {
            let t = nu.tilt(v);
            let b = t.mean();
            let d: Vec<f64> = b.iter().zip(&b0).map(|(x, y)| x - y).collect();
            let disp = d.iter().map(|x| x * x).sum::<f64>();
            let klv = kl(&t, nu).expect("tilt");
            let vv = v.iter().map(|x| x * x).sum::<f64>();
            let (h_lhs, h_rhs, hyp2_l, hyp2_r) = match (eps_i, c) {
                (Some(e), Some(c)) => (
                    Divergence::H.eval(&b, &b0),
                    192.0 * c * klv,
                    v.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>(),
                    v.iter().zip(e).map(|(vi, ei)| ei.max(2.0) * vi * vi * (4.0 * vi.abs()).exp()).sum::<f64>(),
                ),
                _ => (0.0, 0.0, 0.0, 0.0),
            };
            [disp, eps * eps * vv, disp, eps * klv, hyp2_l, hyp2_r, h_lhs, h_rhs]
        })
        .collect();
    let pick = |a: usize, b: usize| rows.iter().map(|r| (r[a], r[b])).collect::<Vec<_>>();
    let mut out = vec![
        worst_record("llentdelta_hypothesis", instance, pick(0, 1), 1e-12),
        worst_record("llentdelta_quadratic", instance, pick(2, 3), 1e-12),
    ];
    if eps_i.is_some() {
        out.push(worst_record("llentdelta_h_hypothesis", instance, pick(4, 5), 1e-12));
        out.push(worst_record("llentdelta_h", instance, pick(6, 7), 1e-12));
    }
    out
}

/// Implications from pinning-wise correlation bounds to entropic stability:
/// quadratic constant `≤ 8α`, H constant `≤ 768 α K³ C` (needs finite `K`).
pub fn theorem_eisi_check(nu: &SpinMeasure, scan: &TiltScan, instance: &str) -> Result<Vec<CheckRecord>> {
    let si = si_all_pinnings(nu, DEFAULT_PIN_BUDGET)?;
    let alpha = si.constant.max(1.0);
    let quad = entropic_stability_scan(nu, &Divergence::identity(nu.n()), scan);
    let h = entropic_stability_scan(nu, &Divergence::H, scan);
    let k = tame_marginals_check(nu, None, DEFAULT_PIN_BUDGET)?.constant.max(1.0);
    let c = marginals_away_from_one(nu, DEFAULT_PIN_BUDGET)?;
    let mut out = vec![
        CheckRecord::info("eisi_alpha", instance, alpha, alpha),
        CheckRecord::le("eisi_quad", instance, quad.constant, 8.0 * alpha, 1e-9),
    ];
    if k.is_finite() && c.is_finite() {
        out.push(CheckRecord::le("eisi_h", instance, h.constant, 768.0 * alpha * k.powi(3) * c, 1e-9));
    } else {
        out.push(CheckRecord::info("eisi_h_untame", instance, h.constant, f64::INFINITY));
    }
    Ok(out)
}

/// Tilted marginal growth: with `δ = max 1 + b_i(R_u ρ)` and the odds range
/// `[δ', δ'']`, every tilt and pinning obeys `1 + b_i ≤ δ e^{max(0, 2v_i)}` and
/// `δ' e^{min(0, 2v_i)} ≤ odds ≤ δ'' e^{max(0, 2v_i)}`.
pub fn lemma_tiltmarginals_check(nu: &SpinMeasure, vs: &[Vec<f64>], instance: &str) -> Result<Vec<CheckRecord>> {
    let table = PinTable::new(nu, DEFAULT_PIN_BUDGET)?;
    let f = table.f;
    let (mut delta, mut lo, mut hi) = (0.0_f64, f64::INFINITY, 0.0_f64);
    let live: Vec<usize> = (0..table.len()).filter(|&i| table.mass[i] > 0.0).collect();
    for &idx in &live {
        for j in 0..f {
            if PinTable::digit(idx, j) == 0 {
                let b = table.mean(idx, j);
                delta = delta.max(1.0 + b);
                lo = lo.min(odds(b));
                hi = hi.max(odds(b));
            }
        }
    }
    let free = nu.free().to_vec();
    let rows: Vec<[f64; 6]> = vs
        .par_iter()
        .flat_map_iter(|v| {
            let free = &free;
            live.iter().map(move |&idx| {
                let u = pinning_from_index(nu, idx);
                let b = nu.pin(&u).expect("live pinning").tilt(v).mean();
                let mut r = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
                let mut margins = [f64::INFINITY; 3];
                for (j, &i) in free.iter().enumerate() {
                    if PinTable::digit(idx, j) != 0 {
                        continue;
                    }
                    let up = (2.0 * v[i]).max(0.0).exp();
                    let down = (2.0 * v[i]).min(0.0).exp();
                    let o = odds(b[i]);
                    let cand = [(1.0 + b[i], delta * up), (lo * down, o), (o, hi * up)];
                    for k in 0..3 {
                        let m = cand[k].1 - cand[k].0;
                        if m < margins[k] || margins[k].is_nan() {
                            margins[k] = m;
                            r[2 * k] = cand[k].0;
                            r[2 * k + 1] = cand[k].1;
                        }
                    }
                }
                r
            })
        })
        .collect();
    let pick = |k: usize| rows.iter().map(|r| (r[2 * k], r[2 * k + 1])).collect::<Vec<_>>();
    let tol = 1e-10;
    Ok(vec![
        worst_record("tiltmarginals_plus", instance, pick(0), tol),
        worst_record("tiltmarginals_odds_lower", instance, pick(1), tol),
        worst_record("tiltmarginals_odds_upper", instance, pick(2), tol),
    ])
}

/// `∏_{i=0}^{m-k-1} max(0, 1 - η_i/(m-i))` for `m` free coordinates.
pub fn product_bound(levels: &[f64], m: usize, k: usize) -> f64 {
    (0..m.saturating_sub(k)).map(|i| (1.0 - levels[i] / (m - i) as f64).max(0.0)).product()
}

/// Gap lower bound for `k`-Glauber from per-level pinning maxima `η_i`.
pub fn alo_bound(si: &Certificate, m: usize, k: usize) -> f64 {
    product_bound(&si.levels, m, k)
}

/// Per-level maxima of the H-stability constant over every pinning.
pub fn h_stability_levels(nu: &SpinMeasure, scan: &TiltScan, budget: u128) -> Result<Vec<f64>> {
    let f = nu.num_free();
    let table = PinTable::new(nu, budget)?;
    let rows: Vec<(usize, f64)> = (0..table.len())
        .into_par_iter()
        .filter(|&idx| table.mass[idx] > 0.0)
        .map(|idx| {
            let u = pinning_from_index(nu, idx);
            let level = u.iter().filter(|s| **s != 0).count();
            let p = nu.pin(&u).expect("live pinning");
            (level, entropic_stability_scan(&p, &Divergence::H, scan).constant)
        })
        .collect();
    let mut levels = vec![0.0_f64; f + 1];
    for (l, c) in rows {
        levels[l] = levels[l].max(c);
    }
    Ok(levels)
}

/// Entropy-contraction floor for `ℓ`-Glauber from per-level H-stability maxima.
pub fn clv_bound(kappa_levels: &[f64], m: usize, l: usize) -> f64 {
    product_bound(kappa_levels, m, l)
}

/// Largest eigenvalue of `C A C` for symmetric `C`, `A`.
pub fn driver_alpha(c: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    lambda_max(&(c * a * c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_examples() {
        assert_eq!(h_divergence(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        assert!((h_divergence(&[1.0], &[0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(h_divergence(&[0.5], &[1.0]).unwrap(), 0.0);
        assert!(matches!(h_divergence(&[1.5], &[0.0]), Err(Error::DomainError(_))));
    }

    #[test]
    fn si_examples() {
        let prod = SpinMeasure::product(&[0.2, -0.4, 0.1]).unwrap();
        let c = si_all_pinnings(&prod, DEFAULT_PIN_BUDGET).unwrap();
        assert!((c.constant - 1.0).abs() < 1e-12);
        let pair = SpinMeasure::from_cube_weights(2, &[0.5, 0.0, 0.0, 0.5]).unwrap();
        let c = si_all_pinnings(&pair, DEFAULT_PIN_BUDGET).unwrap();
        assert!((c.constant - 2.0).abs() < 1e-12);
        assert_eq!(c.witness, Witness::Pinning { u: vec![0, 0] });
        assert!((c.levels[1] - 0.0).abs() < 1e-12);
        assert!(matches!(si_all_pinnings(&prod, 10), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn pin_table_matches_direct_pinning() {
        let nu = SpinMeasure::from_cube_weights(3, &[0.1, 0.2, 0.05, 0.15, 0.2, 0.1, 0.1, 0.1]).unwrap();
        let t = PinTable::new(&nu, u128::MAX).unwrap();
        for idx in 0..t.len() {
            let u = pinning_from_index(&nu, idx);
            let p = nu.pin(&u).unwrap();
            let b = p.mean();
            for j in 0..3 {
                assert!((t.mean(idx, j) - b[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn product_small_tilt_limit_is_one_at_zero_mean() {
        let nu = SpinMeasure::uniform(2).unwrap();
        let (lim, _) = limit_sup(&nu, &Divergence::identity(2));
        assert!((lim - 1.0).abs() < 1e-12);
        let r = tilt_ratio(&nu, &Divergence::identity(2), &[1e-4, 0.0]);
        assert!((r - 1.0).abs() < 1e-12);
        let far = tilt_ratio(&nu, &Divergence::identity(2), &[6.0, 0.0]);
        // One-dimensional Pinsker: ½(Δb)² ≤ KL.
        assert!(far > 0.0 && far < 1.0);
    }

    #[test]
    fn tame_failure_on_correlated_pair() {
        let pair = SpinMeasure::from_cube_weights(2, &[0.5, 0.0, 0.0, 0.5]).unwrap();
        let c = tame_marginals_check(&pair, Some(100.0), DEFAULT_PIN_BUDGET).unwrap();
        assert!(c.constant.is_infinite());
        assert_eq!(c.pass, Some(false));
        assert!(matches!(c.witness, Witness::PinPair { .. }));
    }

    #[test]
    fn tame_product_is_finite() {
        let prod = SpinMeasure::product(&[0.5, -0.5]).unwrap();
        let c = tame_marginals_check(&prod, None, DEFAULT_PIN_BUDGET).unwrap();
        assert!((c.constant - 2.0).abs() < 1e-12, "{}", c.constant);
        let b = bounded_marginals_check(&prod, Some(0.5), DEFAULT_PIN_BUDGET).unwrap();
        assert!((b.constant - 0.5).abs() < 1e-12);
        assert_eq!(b.pass, Some(true));
    }

    #[test]
    fn hphi_right_side_and_abs_hold() {
        let recs = lemma_hphi_check(201);
        let get = |n: &str| recs.iter().find(|r| r.check == n).unwrap().pass;
        assert!(get("hphi_upper"));
        assert!(get("hphi_abs"));
    }

    #[test]
    fn product_bound_examples() {
        assert_eq!(product_bound(&[1.0, 1.0, 1.0], 3, 3), 1.0);
        assert!((product_bound(&[1.0, 1.0, 1.0], 3, 1) - (2.0 / 3.0) * 0.5).abs() < 1e-15);
        assert_eq!(product_bound(&[5.0, 0.0], 2, 0), 0.0);
    }
}
