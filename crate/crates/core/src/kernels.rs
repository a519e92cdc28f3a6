//! Reversible transition kernels: Glauber, ℓ-Glauber, kernels induced by the
//! coordinate-by-coordinate localization, and restricted Gaussian dynamics on
//! the cube.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{binomial, subsets_of_size};
use crate::localization;
use crate::measure::{dot_spin, spin, SpinMeasure};
use crate::rng;

/// Free coordinates above which dense kernels are refused.
pub const MAX_KERNEL_FREE: usize = 14;

/// State space of a kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Cube configurations (full-cube indices) of positive stationary mass.
    Cube { n: usize, states: Vec<usize> },
    /// Points of a one-dimensional grid.
    Grid { points: Vec<f64> },
}

/// Row-stochastic matrix with its stationary distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub support: Support,
    pub pi: Vec<f64>,
    pub p: DMatrix<f64>,
}

impl Kernel {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Maximum deviation of a row sum from 1.
    pub fn row_sum_error(&self) -> f64 {
        self.p.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Maximum of `|π(x)P[x,y] - π(y)P[y,x]|`.
    pub fn detailed_balance_error(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0_f64;
        for x in 0..n {
            for y in x + 1..n {
                worst = worst.max((self.pi[x] * self.p[(x, y)] - self.pi[y] * self.p[(y, x)]).abs());
            }
        }
        worst
    }

    /// Maximum of `|Σ_x π(x)P[x,y] - π(y)|`.
    pub fn stationarity_error(&self) -> f64 {
        let n = self.len();
        (0..n)
            .map(|y| ((0..n).map(|x| self.pi[x] * self.p[(x, y)]).sum::<f64>() - self.pi[y]).abs())
            .fold(0.0, f64::max)
    }

    /// Cube states, panicking for grid kernels.
    pub fn cube_states(&self) -> (usize, &[usize]) {
        match &self.support {
            Support::Cube { n, states } => (*n, states),
            Support::Grid { .. } => panic!("grid kernel has no cube states"),
        }
    }

    /// Index of a cube configuration among the states.
    pub fn state_index(&self, x: usize) -> Option<usize> {
        match &self.support {
            Support::Cube { states, .. } => states.binary_search(&x).ok(),
            Support::Grid { .. } => None,
        }
    }

    /// Lifts a state-indexed vector to a cube-indexed one (zero off the support).
    pub fn to_cube_function(&self, f: &[f64]) -> Vec<f64> {
        let (n, states) = self.cube_states();
        let mut out = vec![0.0; 1 << n];
        for (k, &x) in states.iter().enumerate() {
            out[x] = f[k];
        }
        out
    }

    /// Restricts a cube-indexed vector to the states.
    pub fn from_cube_function(&self, f: &[f64]) -> Vec<f64> {
        let (_, states) = self.cube_states();
        states.iter().map(|&x| f[x]).collect()
    }

    /// Probability vector over states for a measure supported inside the kernel support.
    pub fn distribution_of(&self, mu: &SpinMeasure) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        for (x, w) in mu.support() {
            let k = self.state_index(x).ok_or(Error::NotAbsolutelyContinuous)?;
            out[k] = w;
        }
        Ok(out)
    }

    /// Row-major CSV with a header naming each state.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let labels: Vec<String> = match &self.support {
            Support::Cube { n, states } => states
                .iter()
                .map(|&x| (0..*n).map(|i| if (x >> i) & 1 == 1 { '+' } else { '-' }).collect())
                .collect(),
            Support::Grid { points } => points.iter().map(|p| format!("{p}")).collect(),
        };
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["state".to_string()];
        header.extend(labels.iter().cloned());
        wr.write_record(&header).map_err(csv_err)?;
        for (k, label) in labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend(self.p.row(k).iter().map(|v| format!("{v:e}")));
            wr.write_record(&row).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(e.to_string())
}

fn check_size(nu: &SpinMeasure) -> Result<()> {
    if nu.num_free() > MAX_KERNEL_FREE {
        return Err(Error::BudgetExceeded {
            needed: 1u128 << nu.num_free(),
            budget: 1u128 << MAX_KERNEL_FREE,
        });
    }
    Ok(())
}

/// Positive-mass free indices of `ν` and the map free index -> state index.
fn state_space(nu: &SpinMeasure) -> (Vec<usize>, Vec<usize>) {
    let mut states = Vec::new();
    let mut idx = vec![usize::MAX; nu.weights().len()];
    // Cube indices increase with free indices, so states come out sorted.
    for (a, w) in nu.weights().iter().enumerate() {
        if *w > 0.0 {
            idx[a] = states.len();
            states.push(a);
        }
    }
    (states, idx)
}

fn cube_kernel(nu: &SpinMeasure, free_states: &[usize], p: DMatrix<f64>) -> Kernel {
    Kernel {
        support: Support::Cube {
            n: nu.n(),
            states: free_states.iter().map(|&a| nu.cube_index(a)).collect(),
        },
        pi: free_states.iter().map(|&a| nu.weights()[a]).collect(),
        p,
    }
}

/// Heat-bath single-site dynamics over the free coordinates.
pub fn glauber(nu: &SpinMeasure) -> Result<Kernel> {
    check_size(nu)?;
    let (states, idx) = state_space(nu);
    let f = nu.num_free();
    let w = nu.weights();
    let m = states.len();
    let mut p = DMatrix::zeros(m, m);
    for (r, &a) in states.iter().enumerate() {
        let mut off = 0.0;
        for j in 0..f {
            let b = a ^ (1 << j);
            if w[b] > 0.0 {
                let q = w[b] / (w[a] + w[b]) / f as f64;
                p[(r, idx[b])] = q;
                off += q;
            }
        }
        p[(r, r)] = 1.0 - off;
    }
    Ok(cube_kernel(nu, &states, p))
}

/// Resamples a uniformly random `ℓ`-subset of free coordinates from the
/// conditional law given the rest.
pub fn l_glauber(nu: &SpinMeasure, l: usize) -> Result<Kernel> {
    check_size(nu)?;
    let f = nu.num_free();
    if l > f {
        return Err(Error::SubsetTooLarge { l, f });
    }
    let (states, idx) = state_space(nu);
    let w = nu.weights();
    let m = states.len();
    let subsets = subsets_of_size(f, l);
    let c = binomial(f, l);
    let rows: Vec<Vec<(usize, f64)>> = states
        .par_iter()
        .map(|&a| {
            let mut acc = vec![0.0; m];
            for &mask in &subsets {
                let mask = mask as usize;
                let rest = a & !mask;
                // Enumerate sub-masks of `mask`.
                let mut z = 0.0;
                let mut s = mask;
                loop {
                    z += w[rest | s];
                    if s == 0 {
                        break;
                    }
                    s = (s - 1) & mask;
                }
                let mut s = mask;
                loop {
                    let y = rest | s;
                    if w[y] > 0.0 {
                        acc[idx[y]] += w[y] / z / c;
                    }
                    if s == 0 {
                        break;
                    }
                    s = (s - 1) & mask;
                }
            }
            acc.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect()
        })
        .collect();
    let mut p = DMatrix::zeros(m, m);
    for (r, row) in rows.into_iter().enumerate() {
        for (cidx, v) in row {
            p[(r, cidx)] = v;
        }
    }
    Ok(cube_kernel(nu, &states, p))
}

/// Kernel `P[x,y] = E[ν_τ(x) ν_τ(y) / ν(x)]` under the coordinate-by-coordinate
/// localization, evaluated over the exact law of `ν_τ`.
pub fn kernel_from_coordinate_localization(nu: &SpinMeasure, tau: usize) -> Result<Kernel> {
    check_size(nu)?;
    let ens = localization::coord_enumerate(nu, tau, localization::DEFAULT_BUDGET)?;
    let (states, _) = state_space(nu);
    let cube_states: Vec<usize> = states.iter().map(|&a| nu.cube_index(a)).collect();
    let m = states.len();
    let mut p = DMatrix::zeros(m, m);
    for (wk, member) in &ens.members {
        let pts: Vec<(usize, f64)> = member
            .support()
            .map(|(x, q)| (cube_states.binary_search(&x).expect("member inside support"), q))
            .collect();
        for &(r, qx) in &pts {
            let scale = wk * qx / nu.weights()[states[r]];
            for &(c, qy) in &pts {
                p[(r, c)] += scale * qy;
            }
        }
    }
    Ok(cube_kernel(nu, &states, p))
}

/// Monte Carlo estimate of restricted Gaussian dynamics on the cube.
#[derive(Debug, Clone, PartialEq)]
pub struct RgdEstimate {
    pub kernel: Kernel,
    /// Per-entry standard errors.
    pub se: DMatrix<f64>,
    /// Largest `|π(x)P[x,y] - π(y)P[y,x]|` divided by its combined standard error.
    pub reversibility_z: f64,
}

/// Restricted Gaussian dynamics with step `η`: from `x`, draw `y ~ N(x, ηI)` and
/// move to `z ∝ ν(z) e^{<z,y>/η}`. Rows are averaged over `samples` draws.
/// Fails when `max_se` is given and some entry's standard error exceeds it.
pub fn cube_rgd(nu: &SpinMeasure, eta: f64, samples: usize, seed: u64, max_se: Option<f64>) -> Result<RgdEstimate> {
    check_size(nu)?;
    if !(eta > 0.0) || samples < 2 {
        return Err(Error::PreconditionViolated("need eta > 0 and at least two samples".into()));
    }
    let (states, _) = state_space(nu);
    let xs: Vec<usize> = states.iter().map(|&a| nu.cube_index(a)).collect();
    let logw: Vec<f64> = states.iter().map(|&a| nu.weights()[a].ln()).collect();
    let n = nu.n();
    let m = states.len();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            let mut sum = vec![0.0; m];
            let mut sq = vec![0.0; m];
            let mut y = vec![0.0; n];
            let mut lp = vec![0.0; m];
            for _ in 0..samples {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = (spin(xs[r], i) + eta.sqrt() * g.sample::<f64, _>(StandardNormal)) / eta;
                }
                for k in 0..m {
                    lp[k] = logw[k] + dot_spin(&y, xs[k]);
                }
                let mx = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = lp.iter().map(|l| (l - mx).exp()).sum();
                for k in 0..m {
                    let q = (lp[k] - mx).exp() / z;
                    sum[k] += q;
                    sq[k] += q * q;
                }
            }
            let s = samples as f64;
            let mean: Vec<f64> = sum.iter().map(|v| v / s).collect();
            let se = sum
                .iter()
                .zip(&sq)
                .map(|(a, b)| (((b / s) - (a / s).powi(2)).max(0.0) / (s - 1.0)).sqrt())
                .collect();
            (mean, se)
        })
        .collect();
    let mut p = DMatrix::zeros(m, m);
    let mut se = DMatrix::zeros(m, m);
    for (r, (mean, e)) in rows.into_iter().enumerate() {
        let tot: f64 = mean.iter().sum();
        for c in 0..m {
            p[(r, c)] = mean[c] / tot;
            se[(r, c)] = e[c];
        }
    }
    let kernel = cube_kernel(nu, &states, p);
    let mut z = 0.0_f64;
    for a in 0..m {
        for b in a + 1..m {
            let diff = (kernel.pi[a] * kernel.p[(a, b)] - kernel.pi[b] * kernel.p[(b, a)]).abs();
            let s = (kernel.pi[a] * se[(a, b)]).hypot(kernel.pi[b] * se[(b, a)]);
            if s > 0.0 {
                z = z.max(diff / s);
            }
        }
    }
    let worst = se.iter().cloned().fold(0.0, f64::max);
    if let Some(t) = max_se {
        if worst > t {
            return Err(Error::InsufficientSamples { achieved: worst, requested: t });
        }
    }
    Ok(RgdEstimate { kernel, se, reversibility_z: z })
}
