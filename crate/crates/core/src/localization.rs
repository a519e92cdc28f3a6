//! Localization processes: coordinate-by-coordinate (exact law and sampled
//! steps), stochastic localization driven by Brownian motion, and the
//! negative-fields process with exponential pinning clocks.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, Support};
use crate::linalg::{binomial, subsets_of_size};
use crate::measure::{spin, SpinMeasure};
use crate::rng::{self, Rng as StreamRng};

/// Default cap on `C(f,t)·2^t` ensemble members.
pub const DEFAULT_BUDGET: u128 = 1 << 22;

/// Exact law of a measure-valued random variable: `(probability, measure)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LocEnsemble {
    pub members: Vec<(f64, SpinMeasure)>,
}

impl LocEnsemble {
    /// Largest pointwise gap between the mixture `Σ w_k ν_k` and `ν`.
    pub fn mixture_error(&self, nu: &SpinMeasure) -> f64 {
        let mut mix = vec![0.0; 1 << nu.n()];
        for (w, m) in &self.members {
            for (x, q) in m.support() {
                mix[x] += w * q;
            }
        }
        mix.iter().zip(nu.to_cube()).fold(0.0, |a, (p, q)| a.max((p - q).abs()))
    }

    pub fn total_weight(&self) -> f64 {
        self.members.iter().map(|(w, _)| w).sum()
    }
}

/// Law of `ν_t` under the coordinate-by-coordinate scheme: a uniform `t`-subset
/// `S` of free coordinates is revealed with values drawn from the marginal, and
/// the member is the conditional `ν(· | x_S)`.
pub fn coord_enumerate(nu: &SpinMeasure, t: usize, budget: u128) -> Result<LocEnsemble> {
    let f = nu.num_free();
    if t > f {
        return Err(Error::SubsetTooLarge { l: t, f });
    }
    let needed = binomial(f, t) as u128 * (1u128 << t);
    if needed > budget {
        return Err(Error::BudgetExceeded { needed, budget });
    }
    let c = binomial(f, t);
    let free = nu.free().to_vec();
    let mut members = Vec::new();
    for mask in subsets_of_size(f, t) {
        let coords: Vec<usize> = (0..f).filter(|j| mask >> j & 1 == 1).map(|j| free[j]).collect();
        for vals in 0..1usize << t {
            let mut u = vec![0i8; nu.n()];
            for (k, &i) in coords.iter().enumerate() {
                u[i] = if vals >> k & 1 == 1 { 1 } else { -1 };
            }
            let mass: f64 = nu
                .weights()
                .iter()
                .enumerate()
                .filter(|(a, _)| {
                    let x = nu.cube_index(*a);
                    coords.iter().all(|&i| (spin(x, i) > 0.0) == (u[i] > 0))
                })
                .map(|(_, w)| w)
                .sum();
            if mass > 0.0 {
                members.push((mass / c, nu.pin(&u)?));
            }
        }
    }
    Ok(LocEnsemble { members })
}

/// One revealed coordinate together with its linear-tilt description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordStep {
    pub coord: usize,
    pub value: i8,
    pub threshold: f64,
    /// Nonzero entry `Z_k` of the tilt direction.
    pub z: f64,
}

/// Largest pointwise gap between the linear-tilt update and the pinning, over all
/// steps asserted so far; kept for diagnostics.
pub const TILT_PIN_TOL: f64 = 1e-12;

/// Reveals one uniformly chosen free coordinate. The update is computed both as
/// `ν_t(x)(1 + <x - b, Z>)` and as a pinning; the two must agree.
pub fn coord_sample_step<R: Rng>(nu_t: &SpinMeasure, rng: &mut R) -> Result<(SpinMeasure, CoordStep)> {
    let f = nu_t.num_free();
    if f == 0 {
        return Err(Error::NoFreeCoordinates);
    }
    let k = nu_t.free()[rng.random_range(0..f)];
    let b = nu_t.mean()[k];
    let u: f64 = rng.random_range(-1.0..1.0);
    let plus = b >= u && 1.0 + b > 0.0;
    let (value, z) = if plus { (1i8, 1.0 / (1.0 + b)) } else { (-1i8, -1.0 / (1.0 - b)) };
    let tilted: Vec<f64> = nu_t
        .weights()
        .iter()
        .enumerate()
        .map(|(a, w)| (w * (1.0 + (spin(nu_t.cube_index(a), k) - b) * z)).max(0.0))
        .collect();
    let linear = SpinMeasure::from_weights(nu_t.n(), nu_t.pin_vector().to_vec(), tilted)?;
    let mut pin = vec![0i8; nu_t.n()];
    pin[k] = value;
    let pinned = nu_t.pin(&pin)?;
    let gap = linear.max_abs_diff(&pinned);
    assert!(gap <= TILT_PIN_TOL, "linear-tilt update differs from pinning by {gap}");
    Ok((pinned, CoordStep { coord: k, value, threshold: u, z }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Coordinate,
    Stochastic,
    NegativeFields,
}

/// Event attached to a recorded state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocEvent {
    Start,
    Reveal { coord: usize, value: i8, threshold: f64 },
    /// Sum of driving increments `C dB` since the previous record.
    Gaussian { increment: Vec<f64> },
    Pin { coord: usize },
    Horizon,
}

/// One sampled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LocPath {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub states: Vec<SpinMeasure>,
    pub events: Vec<LocEvent>,
    pub seed: u64,
    pub task: u64,
    /// Largest fraction of mass removed by clipping in one step.
    pub max_clip: f64,
    /// RMS of the per-step renormalization residual.
    pub residual_rms: f64,
}

impl LocPath {
    /// State recorded at time `t` (within 1e-9), if any.
    pub fn state_at(&self, t: f64) -> Option<&SpinMeasure> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-9).map(|k| &self.states[k])
    }

    pub fn last(&self) -> &SpinMeasure {
        self.states.last().expect("paths hold at least the initial state")
    }

    /// Writes one JSON object per event.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            scheme: Scheme,
            seed: u64,
            path: u64,
            t: f64,
            #[serde(flatten)]
            event: &'a LocEvent,
            mean: Vec<f64>,
        }
        for ((t, e), s) in self.times.iter().zip(&self.events).zip(&self.states) {
            let line = Line { scheme: self.scheme, seed: self.seed, path: self.task, t: *t, event: e, mean: s.mean() };
            serde_json::to_writer(&mut w, &line).map_err(|e| Error::Malformed(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| Error::Malformed(e.to_string()))?;
        }
        Ok(())
    }
}

/// Runs `steps` coordinate reveals.
pub fn coord_sample_path(nu: &SpinMeasure, steps: usize, seed: u64, task: u64) -> Result<LocPath> {
    let mut g = rng::stream(seed, task);
    let mut path = LocPath {
        scheme: Scheme::Coordinate,
        times: vec![0.0],
        states: vec![nu.clone()],
        events: vec![LocEvent::Start],
        seed,
        task,
        max_clip: 0.0,
        residual_rms: 0.0,
    };
    for t in 0..steps {
        let (next, step) = coord_sample_step(path.last(), &mut g)?;
        path.times.push((t + 1) as f64);
        path.states.push(next);
        path.events.push(LocEvent::Reveal { coord: step.coord, value: step.value, threshold: step.threshold });
    }
    Ok(path)
}

/// Time-stepping rule for the density ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `F <- F (1 + a)` with `a = <x - b, C ΔB>`.
    EulerMaruyama,
    /// `F <- F (1 + a + (a² - |C(x-b)|² Δt)/2)`: adds the second-order Itô term.
    Milstein,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlOptions {
    pub dt: f64,
    pub horizon: f64,
    /// Record a state every this many steps (the final state is always recorded).
    pub record_every: usize,
    pub integrator: Integrator,
}

impl SlOptions {
    /// `Δt = 1e-3·min(1, 1/||C||²)` and `T = 1`.
    pub fn for_driver_norm(c_norm: f64) -> Self {
        Self {
            dt: 1e-3 * (1.0f64).min(1.0 / (c_norm * c_norm).max(1e-300)),
            horizon: 1.0,
            record_every: usize::MAX,
            integrator: Integrator::Milstein,
        }
    }
}

/// Stochastic localization `dF = F <x - b(ν_t), C_t dB_t>` discretized on the
/// density ratios over the support, with clipping at zero and renormalization.
pub fn sl_simulate(
    nu: &SpinMeasure,
    driver: &(dyn Fn(f64) -> DMatrix<f64> + Sync),
    opts: &SlOptions,
    seed: u64,
    task: u64,
) -> Result<LocPath> {
    if !(opts.dt > 0.0) || !(opts.horizon >= 0.0) {
        return Err(Error::PreconditionViolated("need dt > 0 and horizon >= 0".into()));
    }
    let mut g = rng::stream(seed, task);
    let n = nu.n();
    let steps = (opts.horizon / opts.dt).round() as usize;
    let support: Vec<usize> = nu.weights().iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(a, _)| a).collect();
    let xs: Vec<Vec<f64>> = support.iter().map(|&a| (0..n).map(|i| spin(nu.cube_index(a), i)).collect()).collect();
    let base: Vec<f64> = support.iter().map(|&a| nu.weights()[a]).collect();
    let mut p = base.clone();
    let mut path = LocPath {
        scheme: Scheme::Stochastic,
        times: vec![0.0],
        states: vec![nu.clone()],
        events: vec![LocEvent::Start],
        seed,
        task,
        max_clip: 0.0,
        residual_rms: 0.0,
    };
    let mut acc_inc = vec![0.0; n];
    let mut res_sq = 0.0;
    let sqdt = opts.dt.sqrt();
    for s in 0..steps {
        let t = s as f64 * opts.dt;
        let c = driver(t);
        let mut b = vec![0.0; n];
        for (q, x) in p.iter().zip(&xs) {
            for i in 0..n {
                b[i] += q * x[i];
            }
        }
        let gv = DVector::from_fn(n, |_, _| g.sample::<f64, _>(StandardNormal));
        let dw = &c * gv * sqdt;
        for i in 0..n {
            acc_inc[i] += dw[i];
        }
        let mut clipped = 0.0;
        let mut total = 0.0;
        for (q, x) in p.iter_mut().zip(&xs) {
            let d = DVector::from_fn(n, |i, _| x[i] - b[i]);
            let a = d.dot(&dw);
            let factor = match opts.integrator {
                Integrator::EulerMaruyama => 1.0 + a,
                Integrator::Milstein => {
                    let cd = c.transpose() * &d;
                    1.0 + a + 0.5 * (a * a - cd.norm_squared() * opts.dt)
                }
            };
            let new = *q * factor;
            if new < 0.0 {
                clipped -= new;
                *q = 0.0;
            } else {
                *q = new;
            }
            total += *q;
        }
        if total <= 0.0 {
            return Err(Error::StepTooLarge(1.0));
        }
        let clip_frac = clipped / (total + clipped);
        path.max_clip = path.max_clip.max(clip_frac);
        if clip_frac > 0.01 {
            return Err(Error::StepTooLarge(clip_frac));
        }
        res_sq += (total - 1.0).powi(2);
        p.iter_mut().for_each(|q| *q /= total);
        let last = s + 1 == steps;
        if last || (s + 1) % opts.record_every.max(1) == 0 {
            path.times.push((s + 1) as f64 * opts.dt);
            let mut w = vec![0.0; nu.weights().len()];
            for (k, &a) in support.iter().enumerate() {
                w[a] = p[k];
            }
            path.states.push(SpinMeasure::from_weights(n, nu.pin_vector().to_vec(), w)?);
            path.events.push(LocEvent::Gaussian { increment: std::mem::replace(&mut acc_inc, vec![0.0; n]) });
        }
    }
    path.residual_rms = if steps > 0 { (res_sq / steps as f64).sqrt() } else { 0.0 };
    Ok(path)
}

/// Residuals of the affine fit at each recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlFormReport {
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// Fits `log(ν_t/ν) + t <x, Jx>` by an affine function of `x` over the support
/// (least squares) and reports the largest pointwise residual per recorded time.
pub fn sl_form_check(path: &LocPath, j: &DMatrix<f64>) -> SlFormReport {
    let nu = &path.states[0];
    let n = nu.n();
    let mut residuals = Vec::new();
    for (t, st) in path.times.iter().zip(&path.states) {
        let pts: Vec<(usize, f64)> = nu
            .support()
            .filter(|(x, _)| st.prob(*x) > 0.0)
            .map(|(x, q)| (x, (st.prob(x) / q).ln() + t * crate::models::quad_form(j, x)))
            .collect();
        let design = DMatrix::from_fn(pts.len(), n + 1, |r, c| if c == 0 { 1.0 } else { spin(pts[r].0, c - 1) });
        let rhs = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
        let svd = design.clone().svd(true, true);
        let coef = svd.solve(&rhs, 1e-12).expect("least squares");
        let fit = design * coef;
        residuals.push((fit - rhs).amax());
    }
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    SlFormReport { times: path.times.clone(), residuals, max_residual }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfOptions {
    /// Largest allowed relative change of a pinning rate within one step.
    pub max_rel_change: f64,
    /// Upper bound on a single time step.
    pub max_dt: f64,
    /// Additional times at which the state is recorded.
    pub record_times: Vec<f64>,
}

impl Default for NfOptions {
    fn default() -> Self {
        Self { max_rel_change: 0.01, max_dt: 0.01, record_times: vec![] }
    }
}

/// `tilt(pin(ν, A), -t·1)`.
pub fn nf_state(nu: &SpinMeasure, pins: &[i8], t: f64) -> Result<SpinMeasure> {
    Ok(nu.pin(pins)?.tilt(&vec![-t; nu.n()]))
}

/// Negative-fields localization along `v(t) = -t·1` up to time `s`: each free
/// coordinate `i` is pinned to `+1` at rate `1 + b_i(ν_t)`, and between jumps
/// `ν_t = tilt(pin(ν, A_t), -t·1)`.
pub fn nf_simulate(nu: &SpinMeasure, s: f64, opts: &NfOptions, seed: u64, task: u64) -> Result<LocPath> {
    let mut g = rng::stream(seed, task);
    let n = nu.n();
    let mut pins = vec![0i8; n];
    let mut thresholds: Vec<f64> = (0..n).map(|_| g.sample(Exp1)).collect();
    let mut hazard = vec![0.0; n];
    let mut record: Vec<f64> = opts.record_times.iter().cloned().filter(|r| *r > 0.0 && *r < s).collect();
    record.sort_by(f64::total_cmp);
    record.dedup();
    let mut next_record = 0;
    let mut path = LocPath {
        scheme: Scheme::NegativeFields,
        times: vec![0.0],
        states: vec![nu.clone()],
        events: vec![LocEvent::Start],
        seed,
        task,
        max_clip: 0.0,
        residual_rms: 0.0,
    };
    let mut t = 0.0;
    let mut state = nu.clone();
    let rates = |m: &SpinMeasure, pins: &[i8]| -> (Vec<f64>, Vec<f64>) {
        let mo = m.moments();
        let ones = DVector::from_element(n, 1.0);
        let drift = &mo.cov * ones;
        let r = (0..n).map(|i| if pins[i] == 0 && m.pin_vector()[i] == 0 { 1.0 + mo.b[i] } else { 0.0 }).collect();
        // d/dt b(T_{-t1}) = -Cov·1.
        let d = (0..n).map(|i| -drift[i]).collect();
        (r, d)
    };
    while t < s {
        let (r0, dr) = rates(&state, &pins);
        let mut dt = (s - t).min(opts.max_dt);
        if next_record < record.len() {
            dt = dt.min(record[next_record] - t);
        }
        for i in 0..n {
            if r0[i] > 0.0 && dr[i].abs() > 0.0 {
                dt = dt.min(opts.max_rel_change * r0[i] / dr[i].abs());
            }
        }
        dt = dt.max(1e-12);
        let t1 = t + dt;
        let trial = nf_state(nu, &pins, t1)?;
        let (r1, _) = rates(&trial, &pins);
        // Trapezoid rule on the integrated hazard; locate the first crossing.
        let mut first: Option<(usize, f64)> = None;
        for i in 0..n {
            if r0[i] == 0.0 && r1[i] == 0.0 {
                continue;
            }
            let inc = 0.5 * (r0[i] + r1[i]) * dt;
            if hazard[i] + inc >= thresholds[i] {
                let need = thresholds[i] - hazard[i];
                // Invert the linear rate profile on [t, t1].
                let (a, bslope) = (r0[i], (r1[i] - r0[i]) / dt);
                let tau = if bslope.abs() < 1e-14 {
                    need / a.max(1e-300)
                } else {
                    let disc = (a * a + 2.0 * bslope * need).max(0.0);
                    (-a + disc.sqrt()) / bslope
                }
                .clamp(0.0, dt);
                if first.map_or(true, |(_, f)| tau < f) {
                    first = Some((i, tau));
                }
            }
        }
        match first {
            Some((i, tau)) => {
                let tj = t + tau;
                for k in 0..n {
                    if k != i {
                        let rk = r0[k] + (r1[k] - r0[k]) * tau / dt;
                        hazard[k] += 0.5 * (r0[k] + rk) * tau;
                    }
                }
                hazard[i] = 0.0;
                thresholds[i] = f64::INFINITY;
                pins[i] = 1;
                t = tj;
                state = nf_state(nu, &pins, t)?;
                path.times.push(t);
                path.states.push(state.clone());
                path.events.push(LocEvent::Pin { coord: i });
            }
            None => {
                for i in 0..n {
                    hazard[i] += 0.5 * (r0[i] + r1[i]) * dt;
                }
                t = t1;
                state = trial;
                if next_record < record.len() && (t - record[next_record]).abs() < 1e-12 {
                    t = record[next_record];
                    next_record += 1;
                    path.times.push(t);
                    path.states.push(state.clone());
                    path.events.push(LocEvent::Horizon);
                }
            }
        }
        if (s - t).abs() < 1e-12 {
            t = s;
        }
    }
    if path.times.last() != Some(&s) {
        path.times.push(s);
        path.states.push(nf_state(nu, &pins, s)?);
        path.events.push(LocEvent::Horizon);
    }
    Ok(path)
}

/// Runs `count` independent paths in parallel; path `k` uses stream `(seed, k)`.
pub fn simulate_many<F>(count: usize, f: F) -> Result<Vec<LocPath>>
where
    F: Fn(u64) -> Result<LocPath> + Sync,
{
    (0..count as u64).into_par_iter().map(&f).collect()
}

/// Mean and standard error of `ν_t` across paths, cube-indexed.
pub fn path_mean(paths: &[LocPath], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = paths[0].states[0].n();
    let mut sum = vec![0.0; 1 << n];
    let mut sq = vec![0.0; 1 << n];
    for p in paths {
        let st = p.state_at(t).ok_or_else(|| Error::PreconditionViolated(format!("path lacks time {t}")))?;
        for (x, q) in st.support() {
            sum[x] += q;
            sq[x] += q * q;
        }
    }
    let m = paths.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let se = sum.iter().zip(&sq).map(|(s, q)| ((q / m - (s / m).powi(2)).max(0.0) / (m - 1.0)).sqrt()).collect();
    Ok((mean, se))
}

/// Statistical martingale check: largest `|mean - ν| / SE` over configurations,
/// with configurations of zero standard error required to match exactly.
pub fn martingale_z(paths: &[LocPath], t: f64) -> Result<f64> {
    let nu = &paths[0].states[0];
    let (mean, se) = path_mean(paths, t)?;
    let target = nu.to_cube();
    let mut z = 0.0_f64;
    for x in 0..target.len() {
        let d = (mean[x] - target[x]).abs();
        if se[x] > 0.0 {
            z = z.max(d / se[x]);
        } else if d > 1e-12 {
            z = f64::INFINITY;
        }
    }
    Ok(z)
}

/// Estimated kernel with per-entry standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub kernel: Kernel,
    pub se: DMatrix<f64>,
}

/// Jackknife mean and standard error of a scalar sample.
pub fn jackknife(samples: &[f64]) -> (f64, f64) {
    let m = samples.len();
    let total: f64 = samples.iter().sum();
    let mean = total / m as f64;
    if m < 2 {
        return (mean, f64::INFINITY);
    }
    let loo: Vec<f64> = samples.iter().map(|s| (total - s) / (m - 1) as f64).collect();
    let lbar = loo.iter().sum::<f64>() / m as f64;
    let var = loo.iter().map(|l| (l - lbar).powi(2)).sum::<f64>() * (m - 1) as f64 / m as f64;
    (mean, var.sqrt())
}

/// Averages `ν_τ(x) ν_τ(y) / ν(x)` over paths.
pub fn estimate_kernel_from_paths(paths: &[LocPath], tau: f64) -> Result<KernelEstimate> {
    let nu = &paths[0].states[0];
    let xs: Vec<usize> = nu.support().map(|(x, _)| x).collect();
    let pi: Vec<f64> = nu.support().map(|(_, q)| q).collect();
    let m = xs.len();
    let per_path: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            let st = p.state_at(tau).ok_or_else(|| Error::PreconditionViolated(format!("path lacks time {tau}")))?;
            let q: Vec<f64> = xs.iter().map(|&x| st.prob(x)).collect();
            let mut out = vec![0.0; m * m];
            for r in 0..m {
                for c in 0..m {
                    out[r * m + c] = q[r] * q[c] / pi[r];
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut p = DMatrix::zeros(m, m);
    let mut se = DMatrix::zeros(m, m);
    let mut col = vec![0.0; paths.len()];
    for r in 0..m {
        for c in 0..m {
            for (k, v) in per_path.iter().enumerate() {
                col[k] = v[r * m + c];
            }
            let (mean, e) = jackknife(&col);
            p[(r, c)] = mean;
            se[(r, c)] = e;
        }
    }
    Ok(KernelEstimate { kernel: Kernel { support: Support::Cube { n: nu.n(), states: xs }, pi, p }, se })
}

/// Per-step ratios and theory floors along the coordinate scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservationTrace {
    /// `min over members of E[Q_{t+1} | ν_t] / Q_t` per step.
    pub step_ratios: Vec<f64>,
    /// Theory floor at the member attaining the minimum margin, per step.
    pub step_floors: Vec<f64>,
    /// Smallest `ratio - floor` over all members, per step.
    pub min_margin: Vec<f64>,
    /// `E[Q_t] / Q_0` for `t = 0..=horizon`.
    pub cumulative: Vec<f64>,
    /// Product of the per-step worst floors.
    pub cumulative_floor: Vec<f64>,
}

/// Functional tracked along a localization.
#[derive(Debug, Clone, Copy)]
pub enum Functional<'a> {
    Variance(&'a [f64]),
    Entropy(&'a [f64]),
}

impl Functional<'_> {
    pub fn eval(&self, m: &SpinMeasure) -> Result<f64> {
        match self {
            Functional::Variance(phi) => Ok(m.variance(phi)),
            Functional::Entropy(f) => m.entropy(f),
        }
    }
}

/// Exact variance or entropy trace for the coordinate scheme up to `horizon`.
/// Floors: `1 - ρ(Ψ(ν_t))/(f-t)` for variance, `1 - κ_t/(f-t)` for entropy with
/// `κ_t` supplied by `entropy_constant`.
pub fn conservation_trace(
    nu: &SpinMeasure,
    horizon: usize,
    functional: Functional<'_>,
    entropy_constant: &(dyn Fn(&SpinMeasure) -> f64 + Sync),
) -> Result<ConservationTrace> {
    let f = nu.num_free();
    let q0 = functional.eval(nu)?;
    let mut tr = ConservationTrace {
        step_ratios: vec![],
        step_floors: vec![],
        min_margin: vec![],
        cumulative: vec![1.0],
        cumulative_floor: vec![1.0],
    };
    for t in 0..horizon.min(f) {
        let ens = coord_enumerate(nu, t, DEFAULT_BUDGET)?;
        let rows: Vec<(f64, f64, f64, f64)> = ens
            .members
            .par_iter()
            .map(|(w, m)| {
                let q = functional.eval(m)?;
                let next = expected_post(m, 1, functional)?;
                let kappa = match functional {
                    Functional::Variance(_) => m.si_radius(),
                    Functional::Entropy(_) => entropy_constant(m),
                };
                let floor = 1.0 - kappa / (f - t) as f64;
                let ratio = if q > 1e-300 { next / q } else { 1.0 };
                Ok((*w, ratio, floor, next))
            })
            .collect::<Result<_>>()?;
        let mut worst = (f64::INFINITY, 0.0, f64::INFINITY);
        let mut floor_min = f64::INFINITY;
        let mut expected_next = 0.0;
        for &(w, ratio, floor, next) in &rows {
            expected_next += w * next;
            floor_min = floor_min.min(floor);
            if ratio - floor < worst.2 {
                worst = (ratio, floor, ratio - floor);
            }
        }
        tr.step_ratios.push(rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min));
        tr.step_floors.push(worst.1);
        tr.min_margin.push(worst.2);
        tr.cumulative.push(if q0 > 0.0 { expected_next / q0 } else { 1.0 });
        let prev = *tr.cumulative_floor.last().unwrap();
        tr.cumulative_floor.push(prev * floor_min.max(0.0));
    }
    Ok(tr)
}

/// `E[Q(ν_t)]` under the coordinate scheme started at `nu`, by exact enumeration.
pub fn expected_post(nu: &SpinMeasure, t: usize, functional: Functional<'_>) -> Result<f64> {
    let ens = coord_enumerate(nu, t, DEFAULT_BUDGET)?;
    let mut acc = 0.0;
    for (w, m) in &ens.members {
        acc += w * functional.eval(m)?;
    }
    Ok(acc)
}

/// One-step variance decay `Var_t - E[Var_{t+1} | ν_t]` and the tilt-covariance
/// form `<v, C v>` with `v = ∫(x - b)φ dν_t`, `C = Cov(Z | ν_t)`.
pub fn variance_decay_pair(nu_t: &SpinMeasure, phi: &[f64]) -> Result<(f64, f64)> {
    let f = nu_t.num_free();
    if f == 0 {
        return Err(Error::NoFreeCoordinates);
    }
    let lhs = nu_t.variance(phi) - expected_post(nu_t, 1, Functional::Variance(phi))?;
    let b = nu_t.mean();
    let mut rhs = 0.0;
    for &k in nu_t.free() {
        if 1.0 - b[k].abs() < 1e-15 {
            continue;
        }
        let v: f64 = nu_t.support().map(|(x, q)| q * (spin(x, k) - b[k]) * phi[x]).sum();
        rhs += v * v / (f as f64 * (1.0 - b[k] * b[k]));
    }
    Ok((lhs, rhs))
}

/// Exact one-step entropy decay and `ν_t(f)·H(b(μ), b(ν_t))/(f_t)` with `μ ∝ f ν_t`.
pub fn entropy_decay_pair(nu_t: &SpinMeasure, f: &[f64]) -> Result<(f64, f64)> {
    let nf = nu_t.num_free();
    if nf == 0 {
        return Err(Error::NoFreeCoordinates);
    }
    let lhs = nu_t.entropy(f)? - expected_post(nu_t, 1, Functional::Entropy(f))?;
    let mass = nu_t.expectation(f);
    let b = nu_t.mean();
    let mut bm = vec![0.0; nu_t.n()];
    for (x, q) in nu_t.support() {
        for (i, v) in bm.iter_mut().enumerate() {
            *v += q * f[x] * spin(x, i) / mass;
        }
    }
    let h = crate::stability::h_divergence(&bm, &b)?;
    Ok((lhs, mass * h / nf as f64))
}

/// Ensemble paths kept only at the final time, for memory-light Monte Carlo.
pub fn final_states(paths: &[LocPath]) -> Vec<SpinMeasure> {
    paths.iter().map(|p| p.last().clone()).collect()
}

/// Random stream helper for callers that sample their own steps.
pub fn path_rng(seed: u64, task: u64) -> StreamRng {
    rng::stream(seed, task)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extreme_times() {
        let nu = SpinMeasure::product(&[0.2, -0.3, 0.5]).unwrap();
        let e0 = coord_enumerate(&nu, 0, DEFAULT_BUDGET).unwrap();
        assert_eq!(e0.members.len(), 1);
        assert_eq!(e0.members[0].1, nu);
        let e3 = coord_enumerate(&nu, 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(e3.members.len(), 8);
        assert!(e3.members.iter().all(|(_, m)| m.num_free() == 0));
        assert!(e3.mixture_error(&nu) < 1e-15);
        assert!(matches!(coord_enumerate(&nu, 3, 4), Err(Error::BudgetExceeded { .. })));
    }

    #[test]
    fn single_spin_reveal_is_dirac() {
        let nu = SpinMeasure::uniform(1).unwrap();
        let mut g = rng::stream(9, 0);
        for _ in 0..20 {
            let (m, step) = coord_sample_step(&nu, &mut g).unwrap();
            assert_eq!(m.num_free(), 0);
            assert_eq!(step.z.abs(), 1.0);
        }
        let d = SpinMeasure::dirac(&[1]).unwrap();
        assert_eq!(coord_sample_step(&d, &mut g), Err(Error::NoFreeCoordinates));
    }

    #[test]
    fn zero_driver_keeps_measure() {
        let nu = SpinMeasure::product(&[0.3, -0.1]).unwrap();
        let zero = |_t: f64| DMatrix::zeros(2, 2);
        let opts = SlOptions { dt: 0.01, horizon: 0.1, record_every: 1, integrator: Integrator::EulerMaruyama };
        let p = sl_simulate(&nu, &zero, &opts, 1, 0).unwrap();
        assert!(p.states.iter().all(|s| s.max_abs_diff(&nu) < 1e-15));
    }

    #[test]
    fn nf_states_keep_tilt_pin_form() {
        let g = crate::models::Graph::path(2);
        let nu = crate::models::build_hardcore(&crate::models::HardcoreSpec::new(g, 1.0).unwrap()).unwrap();
        for task in 0..20 {
            let p = nf_simulate(&nu, 2.0, &NfOptions::default(), 3, task).unwrap();
            let mut pins = vec![0i8; 2];
            for ((t, e), s) in p.times.iter().zip(&p.events).zip(&p.states) {
                if let LocEvent::Pin { coord } = e {
                    pins[*coord] = 1;
                }
                assert!(s.max_abs_diff(&nf_state(&nu, &pins, *t).unwrap()) <= 1e-12);
            }
            assert_eq!(*p.times.last().unwrap(), 2.0);
        }
    }

    #[test]
    fn jackknife_of_mean_matches_standard_error() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let (m, se) = jackknife(&xs);
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0;
        assert!((se - (var / 4.0).sqrt()).abs() < 1e-14);
    }
}
