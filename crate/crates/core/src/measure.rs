//! Dense probability measures on pinned subcubes of `{-1,1}^n`.
//!
//! A measure stores a pin vector `u` and a weight table over the `2^f`
//! configurations of its `f` free coordinates. Free index bit `j` is the value
//! of the `j`-th free coordinate (set means `+1`). Full-cube indices use the
//! same convention with bit `i` for coordinate `i`; test functions passed to
//! the functionals below are indexed that way and have length `2^n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Largest supported dimension for measure operations.
pub const N_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct SpinMeasure {
    n: usize,
    pin: Vec<i8>,
    weights: Vec<f64>,
    free: Vec<usize>,
    base: usize,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    n: usize,
    pin: Vec<i8>,
    weights: Vec<f64>,
}

impl TryFrom<MeasureRepr> for SpinMeasure {
    type Error = Error;
    fn try_from(r: MeasureRepr) -> Result<Self> {
        let s: f64 = r.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Malformed(format!("weights sum to {s}")));
        }
        SpinMeasure::from_weights(r.n, r.pin, r.weights)
    }
}

impl From<SpinMeasure> for MeasureRepr {
    fn from(m: SpinMeasure) -> Self {
        MeasureRepr { n: m.n, pin: m.pin, weights: m.weights }
    }
}

/// Center of mass and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub b: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub free_mask: Vec<bool>,
}

/// Influence and correlation matrices restricted to the free coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Influence {
    /// Free coordinates, in the row/column order of the matrices.
    pub coords: Vec<usize>,
    pub psi: DMatrix<f64>,
    pub cor: DMatrix<f64>,
    pub rho: f64,
}

fn check_dim(n: usize) -> Result<()> {
    if n > N_MAX {
        return Err(Error::DimensionTooLarge { n, max: N_MAX });
    }
    Ok(())
}

/// Stable `(1+d) ln(1+d) - d`, the entropy integrand around its minimum.
pub fn phi(d: f64) -> f64 {
    if d.abs() < 1e-3 {
        // Alternating series d^2/2 - d^3/6 + d^4/12 - d^5/20 ...
        let d2 = d * d;
        d2 * (0.5 - d / 6.0 + d2 / 12.0 - d2 * d / 20.0 + d2 * d2 / 30.0)
    } else if d <= -1.0 {
        1.0
    } else {
        (1.0 + d) * d.ln_1p() - d
    }
}

impl SpinMeasure {
    /// Builds a measure from a pin vector and weights over its free configurations.
    /// Weights are renormalized; they must be finite, nonnegative and not all zero.
    pub fn from_weights(n: usize, pin: Vec<i8>, mut weights: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        if pin.len() != n {
            return Err(Error::Malformed(format!("pin has length {} for n = {n}", pin.len())));
        }
        if pin.iter().any(|p| !matches!(p, -1..=1)) {
            return Err(Error::Malformed("pin entries must lie in {-1,0,1}".into()));
        }
        let free: Vec<usize> = (0..n).filter(|&i| pin[i] == 0).collect();
        if weights.len() != 1 << free.len() {
            return Err(Error::Malformed(format!(
                "expected {} weights, got {}",
                1usize << free.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0) {
            return Err(Error::NegativeInput(*w));
        }
        let s: f64 = weights.iter().sum();
        if s <= 0.0 {
            return Err(Error::AllZeroMass);
        }
        weights.iter_mut().for_each(|w| *w /= s);
        let base = (0..n).filter(|&i| pin[i] == 1).fold(0, |m, i| m | (1 << i));
        Ok(Self { n, pin, weights, free, base })
    }

    /// Builds a measure from unnormalized weights over the full cube, pinning every
    /// coordinate that is constant across the support.
    pub fn from_cube_weights(n: usize, cube: &[f64]) -> Result<Self> {
        check_dim(n)?;
        if cube.len() != 1 << n {
            return Err(Error::Malformed(format!("expected {} cube weights", 1usize << n)));
        }
        if cube.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        if let Some(w) = cube.iter().find(|w| **w < 0.0) {
            return Err(Error::NegativeInput(*w));
        }
        let (mut seen_minus, mut seen_plus) = (0usize, 0usize);
        let mut any = false;
        for (x, &w) in cube.iter().enumerate() {
            if w > 0.0 {
                any = true;
                seen_plus |= x;
                seen_minus |= !x;
            }
        }
        if !any {
            return Err(Error::AllZeroMass);
        }
        let pin: Vec<i8> = (0..n)
            .map(|i| match ((seen_minus >> i) & 1, (seen_plus >> i) & 1) {
                (1, 0) => -1,
                (0, 1) => 1,
                _ => 0,
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| pin[i] == 0).collect();
        let base = (0..n).filter(|&i| pin[i] == 1).fold(0, |m, i| m | (1 << i));
        let weights = (0..1usize << free.len()).map(|a| cube[scatter(a, &free, base)]).collect();
        Self::from_weights(n, pin, weights)
    }

    /// Builds a measure from log-weights over the full cube (`-inf` for zero mass),
    /// subtracting the maximum before exponentiating.
    pub fn from_cube_log_weights(n: usize, logw: &[f64]) -> Result<Self> {
        if logw.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::NonFinite("log-weights"));
        }
        let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(Error::AllZeroMass);
        }
        let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        Self::from_cube_weights(n, &w)
    }

    /// Normalizes a configuration-to-weight table.
    pub fn materialize(table: &[(Vec<i8>, f64)], n: usize) -> Result<Self> {
        check_dim(n)?;
        let mut cube = vec![0.0; 1 << n];
        for (x, w) in table {
            if x.len() != n || x.iter().any(|s| *s != 1 && *s != -1) {
                return Err(Error::Malformed("configuration entries must be ±1".into()));
            }
            if !w.is_finite() {
                return Err(Error::NonFinite("weights"));
            }
            cube[encode(x)] += *w;
        }
        Self::from_cube_weights(n, &cube)
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_dim(n)?;
        Self::from_weights(n, vec![0; n], vec![1.0; 1 << n])
    }

    /// Product measure with the given coordinate means in `(-1, 1)`.
    pub fn product(means: &[f64]) -> Result<Self> {
        let n = means.len();
        check_dim(n)?;
        let cube: Vec<f64> = (0..1usize << n)
            .map(|x| {
                means
                    .iter()
                    .enumerate()
                    .map(|(i, m)| if x >> i & 1 == 1 { (1.0 + m) / 2.0 } else { (1.0 - m) / 2.0 })
                    .product()
            })
            .collect();
        Self::from_cube_weights(n, &cube)
    }

    pub fn dirac(x: &[i8]) -> Result<Self> {
        Self::from_weights(x.len(), x.to_vec(), vec![1.0])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pin_vector(&self) -> &[i8] {
        &self.pin
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Free (unpinned) coordinates in increasing order.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Full-cube index of free configuration `a`.
    #[inline]
    pub fn cube_index(&self, a: usize) -> usize {
        scatter(a, &self.free, self.base)
    }

    /// Free index of a full-cube configuration, if it lies in the pinned subcube.
    pub fn free_index(&self, x: usize) -> Option<usize> {
        for i in 0..self.n {
            let bit = (x >> i) & 1;
            match self.pin[i] {
                1 if bit == 0 => return None,
                -1 if bit == 1 => return None,
                _ => {}
            }
        }
        Some(self.free.iter().enumerate().fold(0, |a, (j, &i)| a | (((x >> i) & 1) << j)))
    }

    /// Probability of a full-cube configuration.
    pub fn prob(&self, x: usize) -> f64 {
        self.free_index(x).map_or(0.0, |a| self.weights[a])
    }

    /// `(cube index, weight)` over configurations of positive mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(move |(a, w)| (self.cube_index(a), *w))
    }

    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// Dense weight vector over the full cube.
    pub fn to_cube(&self) -> Vec<f64> {
        let mut out = vec![0.0; 1 << self.n];
        for (a, w) in self.weights.iter().enumerate() {
            out[self.cube_index(a)] = *w;
        }
        out
    }

    /// Largest pointwise difference between two measures on the same cube.
    pub fn max_abs_diff(&self, other: &SpinMeasure) -> f64 {
        assert_eq!(self.n, other.n);
        self.to_cube().iter().zip(other.to_cube()).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Exponential tilt: weights proportional to `ν(x) exp(<v, x>)`.
    pub fn tilt(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.n);
        let logs: Vec<f64> = self
            .weights
            .iter()
            .enumerate()
            .map(|(a, w)| {
                if *w > 0.0 {
                    w.ln() + dot_spin(v, self.cube_index(a))
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = logs.iter().map(|l| (l - m).exp()).collect();
        Self::from_weights(self.n, self.pin.clone(), w).expect("tilt of a valid measure")
    }

    /// Restriction to the subcube selected by `u`, renormalized.
    pub fn pin(&self, u: &[i8]) -> Result<Self> {
        assert_eq!(u.len(), self.n);
        let mut new_pin = self.pin.clone();
        for i in 0..self.n {
            if u[i] == 0 {
                continue;
            }
            if !matches!(u[i], -1 | 1) {
                return Err(Error::Malformed("pin entries must lie in {-1,0,1}".into()));
            }
            if self.pin[i] != 0 && self.pin[i] != u[i] {
                return Err(Error::IncompatiblePin(i));
            }
            new_pin[i] = u[i];
        }
        let new_free: Vec<usize> = (0..self.n).filter(|&i| new_pin[i] == 0).collect();
        let base = (0..self.n).filter(|&i| new_pin[i] == 1).fold(0, |m, i| m | (1 << i));
        let weights: Vec<f64> = (0..1usize << new_free.len())
            .map(|a| self.prob(scatter(a, &new_free, base)))
            .collect();
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::ZeroMassSubcube);
        }
        Self::from_weights(self.n, new_pin, weights)
    }

    /// Pins every free coordinate that is constant across the support.
    pub fn collapse_deterministic(&self) -> Self {
        Self::from_cube_weights(self.n, &self.to_cube()).expect("valid measure")
    }

    /// Center of mass `b(ν)`.
    pub fn mean(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n];
        for (a, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = self.cube_index(a);
            for (i, bi) in b.iter_mut().enumerate() {
                *bi += w * spin(x, i);
            }
        }
        b
    }

    pub fn moments(&self) -> Moments {
        let n = self.n;
        let b = self.mean();
        let mut second = DMatrix::<f64>::zeros(n, n);
        for (a, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let x = self.cube_index(a);
            for i in 0..n {
                let xi = spin(x, i);
                for j in i..n {
                    second[(i, j)] += w * xi * spin(x, j);
                }
            }
        }
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let c = if self.pin[i] != 0 || self.pin[j] != 0 {
                    0.0
                } else if i == j {
                    1.0 - b[i] * b[i]
                } else {
                    second[(i, j)] - b[i] * b[j]
                };
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        Moments {
            b: DVector::from_vec(b),
            cov,
            free_mask: self.pin.iter().map(|p| *p == 0).collect(),
        }
    }

    /// Covariance restricted to the free coordinates.
    pub fn free_cov(&self) -> DMatrix<f64> {
        let m = self.moments();
        let f = &self.free;
        DMatrix::from_fn(f.len(), f.len(), |r, c| m.cov[(f[r], f[c])])
    }

    /// Influence matrix `Cov diag(Cov)^-1`, correlation matrix and spectral radius,
    /// all over the free coordinates.
    pub fn influence_correlation(&self) -> Result<Influence> {
        let cov = self.free_cov();
        let k = self.free.len();
        for r in 0..k {
            if cov[(r, r)] <= 1e-15 {
                return Err(Error::DegenerateCoordinate(self.free[r]));
            }
        }
        let psi = DMatrix::from_fn(k, k, |r, c| cov[(r, c)] / cov[(c, c)]);
        let cor = DMatrix::from_fn(k, k, |r, c| cov[(r, c)] / (cov[(r, r)] * cov[(c, c)]).sqrt());
        let rho = linalg::lambda_max(&cor);
        Ok(Influence { coords: self.free.clone(), psi, cor, rho })
    }

    /// Spectral radius of the influence matrix after pinning deterministic
    /// coordinates; 0 when nothing random remains.
    pub fn si_radius(&self) -> f64 {
        let c = self.collapse_deterministic();
        if c.num_free() == 0 {
            return 0.0;
        }
        c.influence_correlation().expect("collapsed measure has no degenerate coordinate").rho
    }

    /// Influence matrix from conditional laws:
    /// entry `(i, j)` is `P(X_i = 1 | X_j = 1) - P(X_i = 1 | X_j = -1)` over free coordinates.
    pub fn influence_by_conditioning(&self) -> Result<DMatrix<f64>> {
        let k = self.free.len();
        let mut out = DMatrix::<f64>::zeros(k, k);
        for (c, &j) in self.free.iter().enumerate() {
            let mut u = vec![0i8; self.n];
            u[j] = 1;
            let plus = self.pin(&u).map_err(|_| Error::DegenerateCoordinate(j))?;
            u[j] = -1;
            let minus = self.pin(&u).map_err(|_| Error::DegenerateCoordinate(j))?;
            let (bp, bm) = (plus.mean(), minus.mean());
            for (r, &i) in self.free.iter().enumerate() {
                out[(r, c)] = (bp[i] - bm[i]) / 2.0;
            }
        }
        Ok(out)
    }

    /// `E_ν[φ]` for a cube-indexed function.
    pub fn expectation(&self, phi: &[f64]) -> f64 {
        debug_assert_eq!(phi.len(), 1 << self.n);
        self.weights.iter().enumerate().map(|(a, w)| w * phi[self.cube_index(a)]).sum()
    }

    /// `Var_ν[φ]`, computed around the mean.
    pub fn variance(&self, phi: &[f64]) -> f64 {
        let m = self.expectation(phi);
        self.weights
            .iter()
            .enumerate()
            .map(|(a, w)| {
                let d = phi[self.cube_index(a)] - m;
                w * d * d
            })
            .sum()
    }

    /// `Ent_ν[f] = E[f log f] - m log m` with `0 log 0 = 0`, evaluated as
    /// `m E[Φ(f/m - 1)]` so every summand is nonnegative.
    pub fn entropy(&self, f: &[f64]) -> Result<f64> {
        let mut m = 0.0;
        for (a, w) in self.weights.iter().enumerate() {
            let v = f[self.cube_index(a)];
            if v < -1e-14 {
                return Err(Error::NegativeInput(v));
            }
            m += w * v.max(0.0);
        }
        if m <= 0.0 {
            return Ok(0.0);
        }
        Ok(m * self
            .weights
            .iter()
            .enumerate()
            .map(|(a, w)| w * phi(f[self.cube_index(a)].max(0.0) / m - 1.0))
            .sum::<f64>())
    }

    /// `log E_ν[exp <v, x>]`.
    pub fn log_laplace(&self, v: &[f64]) -> f64 {
        let terms: Vec<(f64, f64)> = self
            .support()
            .map(|(x, w)| (w.ln(), dot_spin(v, x)))
            .collect();
        let m = terms.iter().map(|(l, d)| l + d).fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|(l, d)| (l + d - m).exp()).sum::<f64>().ln()
    }

    /// Tilt `v` (zero on pinned and deterministic coordinates) with `b(T_v ν) = target`.
    pub fn moment_matching_tilt(&self, target: &[f64], max_iter: usize) -> Result<Vec<f64>> {
        assert_eq!(target.len(), self.n);
        let base = self.mean();
        let collapsed = self.collapse_deterministic();
        for i in 0..self.n {
            if collapsed.pin[i] != 0 && (target[i] - base[i]).abs() > 1e-12 {
                return Err(Error::OutsideHull);
            }
        }
        let act: Vec<usize> = collapsed.free.clone();
        let mut v = vec![0.0; self.n];
        if act.is_empty() {
            return Ok(v);
        }
        let objective = |v: &[f64]| {
            self.log_laplace(v) - act.iter().map(|&i| v[i] * target[i]).sum::<f64>()
        };
        let mut obj = objective(&v);
        for _ in 0..max_iter {
            let t = self.tilt(&v);
            let mom = t.moments();
            let g: Vec<f64> = act.iter().map(|&i| mom.b[i] - target[i]).collect();
            if g.iter().all(|x| x.abs() <= 1e-11) {
                return Ok(v);
            }
            let h = DMatrix::from_fn(act.len(), act.len(), |r, c| mom.cov[(act[r], act[c])]);
            let (vals, vecs) = linalg::sym_eigen(&h);
            let top = vals.last().copied().unwrap_or(0.0).max(1e-300);
            let gv = DVector::from_vec(g.clone());
            let mut step = DVector::zeros(act.len());
            for (k, &lam) in vals.iter().enumerate() {
                if lam > 1e-14 * top {
                    let col = vecs.column(k);
                    step -= col * (col.dot(&gv) / lam);
                }
            }
            let mut s = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = {
                    let mut c = v.clone();
                    for (r, &i) in act.iter().enumerate() {
                        c[i] += s * step[r];
                    }
                    c
                };
                if cand.iter().any(|x| x.abs() > 40.0) {
                    s *= 0.5;
                    continue;
                }
                let o = objective(&cand);
                let decrease: f64 = -s * step.dot(&gv);
                // Near the optimum the Armijo decrease drops below rounding in
                // the objective; a full Newton step is then taken as is.
                let flat = s == 1.0 && o <= obj + 64.0 * f64::EPSILON * obj.abs().max(1.0);
                if o <= obj - 1e-4 * decrease || flat || (o <= obj && s < 1e-6) {
                    v = cand;
                    obj = o;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                return Err(Error::OutsideHull);
            }
        }
        let b = self.tilt(&v).mean();
        if act.iter().all(|&i| (b[i] - target[i]).abs() <= 1e-9) {
            Ok(v)
        } else {
            Err(Error::MaxIterations(max_iter))
        }
    }

    /// Legendre dual of the log-Laplace transform at `target`, i.e. `KL(T_v ν || ν)`
    /// for the moment-matching tilt `v`.
    pub fn legendre_dual(&self, target: &[f64]) -> Result<f64> {
        let v = self.moment_matching_tilt(target, 200)?;
        let b = self.tilt(&v).mean();
        Ok(v.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>() - self.log_laplace(&v))
    }
}

/// `D_KL(μ || ν)`.
pub fn kl(mu: &SpinMeasure, nu: &SpinMeasure) -> Result<f64> {
    assert_eq!(mu.n, nu.n);
    let mut acc = 0.0;
    for (x, w) in mu.support() {
        let q = nu.prob(x);
        if q <= 0.0 {
            return Err(Error::NotAbsolutelyContinuous);
        }
        acc += w * (w / q).ln();
    }
    Ok(acc.max(0.0))
}

/// Spin value `±1` of coordinate `i` in cube configuration `x`.
#[inline]
pub fn spin(x: usize, i: usize) -> f64 {
    if (x >> i) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// `<v, x>` for a cube configuration.
#[inline]
pub fn dot_spin(v: &[f64], x: usize) -> f64 {
    v.iter().enumerate().map(|(i, vi)| vi * spin(x, i)).sum()
}

/// Cube index of a `±1` configuration.
pub fn encode(x: &[i8]) -> usize {
    x.iter().enumerate().fold(0, |m, (i, s)| if *s > 0 { m | (1 << i) } else { m })
}

/// `±1` configuration of a cube index.
pub fn decode(x: usize, n: usize) -> Vec<i8> {
    (0..n).map(|i| if (x >> i) & 1 == 1 { 1 } else { -1 }).collect()
}

#[inline]
fn scatter(a: usize, free: &[usize], base: usize) -> usize {
    let mut x = base;
    for (j, &i) in free.iter().enumerate() {
        x |= ((a >> j) & 1) << i;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn materialize_detects_constant_coordinate() {
        let m = SpinMeasure::materialize(&[(vec![1, 1], 2.0), (vec![1, -1], 2.0)], 2).unwrap();
        assert_eq!(m.pin_vector(), &[1, 0]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn materialize_rejects_bad_tables() {
        assert_eq!(
            SpinMeasure::materialize(&[(vec![1], 0.0), (vec![-1], 0.0)], 1),
            Err(Error::AllZeroMass)
        );
        assert_eq!(
            SpinMeasure::materialize(&[(vec![1], f64::NAN)], 1),
            Err(Error::NonFinite("weights"))
        );
    }

    #[test]
    fn hand_summed_covariance() {
        let m = SpinMeasure::materialize(
            &[(vec![-1, -1], 3.0), (vec![1, 1], 3.0), (vec![-1, 1], 1.0), (vec![1, -1], 1.0)],
            2,
        )
        .unwrap();
        let mo = m.moments();
        assert_abs_diff_eq!(mo.b[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mo.cov[(0, 1)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_spin_tilt_is_tanh() {
        let m = SpinMeasure::uniform(1).unwrap();
        for a in [-3.0, -0.2, 0.7, 5.0] {
            assert_abs_diff_eq!(m.tilt(&[a]).mean()[0], f64::tanh(a), epsilon = 1e-14);
        }
    }

    #[test]
    fn pinning_everything_gives_dirac() {
        let m = SpinMeasure::uniform(2).unwrap().pin(&[1, 1]).unwrap();
        assert_eq!(m.num_free(), 0);
        assert_eq!(m.prob(0b11), 1.0);
        assert!(m.free_cov().is_empty());
    }

    #[test]
    fn incompatible_and_empty_pins() {
        let m = SpinMeasure::materialize(&[(vec![1, 1], 1.0), (vec![-1, -1], 1.0)], 2).unwrap();
        assert_eq!(m.pin(&[1, -1]), Err(Error::ZeroMassSubcube));
        let p = m.pin(&[1, 0]).unwrap();
        assert_eq!(p.pin(&[-1, 0]), Err(Error::IncompatiblePin(0)));
    }

    #[test]
    fn perfectly_correlated_pair() {
        let m = SpinMeasure::materialize(&[(vec![1, 1], 1.0), (vec![-1, -1], 1.0)], 2).unwrap();
        let inf = m.influence_correlation().unwrap();
        assert_abs_diff_eq!(inf.rho, 2.0, epsilon = 1e-12);
        assert!(inf.cor.iter().all(|c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_coordinate_is_reported() {
        let m = SpinMeasure::materialize(&[(vec![1, 1], 1.0), (vec![1, -1], 1.0)], 2).unwrap();
        // Coordinate 0 is pinned by materialize; unpin it by hand.
        let raw = SpinMeasure::from_weights(2, vec![0, 0], vec![0.0, 0.5, 0.0, 0.5]).unwrap();
        assert_eq!(raw.influence_correlation(), Err(Error::DegenerateCoordinate(0)));
        assert!(m.influence_correlation().is_ok());
    }

    #[test]
    fn entropy_and_kl_basics() {
        let m = SpinMeasure::product(&[0.3, -0.5]).unwrap();
        assert_eq!(m.entropy(&[2.0; 4]).unwrap(), 0.0);
        assert_eq!(kl(&m, &m).unwrap(), 0.0);
        assert!(matches!(m.entropy(&[1.0, -1.0, 0.0, 0.0]), Err(Error::NegativeInput(_))));
        let d = SpinMeasure::dirac(&[1, 1]).unwrap();
        assert_eq!(kl(&m, &d), Err(Error::NotAbsolutelyContinuous));
    }

    #[test]
    fn entropy_matches_naive_formula() {
        let m = SpinMeasure::product(&[0.1, 0.6, -0.2]).unwrap();
        let f: Vec<f64> = (0..8).map(|x| 0.5 + x as f64).collect();
        let mean = m.expectation(&f);
        let naive: f64 = m.support().map(|(x, w)| w * f[x] * f[x].ln()).sum::<f64>() - mean * mean.ln();
        assert_abs_diff_eq!(m.entropy(&f).unwrap(), naive, epsilon = 1e-13);
    }

    #[test]
    fn phi_series_matches_closed_form() {
        for d in [-9e-4, -1e-5, 1e-7, 5e-4, 9.9e-4] {
            let exact = (1.0 + d) * f64::ln_1p(d) - d;
            assert!((phi(d) - exact).abs() <= 1e-15 + 1e-9 * exact.abs(), "d = {d}");
        }
        assert_eq!(phi(-1.0), 1.0);
    }

    #[test]
    fn newton_inverts_tanh() {
        let m = SpinMeasure::uniform(1).unwrap();
        let v = m.moment_matching_tilt(&[0.5], 200).unwrap();
        assert_abs_diff_eq!(v[0], f64::atanh(0.5), epsilon = 1e-10);
        assert_eq!(m.moment_matching_tilt(&[0.0], 200).unwrap(), vec![0.0]);
    }

    #[test]
    fn json_round_trip() {
        let m = SpinMeasure::product(&[0.2, -0.4]).unwrap().pin(&[0, 1]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: SpinMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<SpinMeasure>(r#"{"n":1,"pin":[0],"weights":[0.2,0.2]}"#).is_err());
    }
}
