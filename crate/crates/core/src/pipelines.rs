//! Scheme concatenation and the bound assemblers for the Ising and hardcore
//! applications. Every assembled bound is bracketed by exact or adversarial
//! quantities of the chain it claims to control.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{glauber, kernel_from_coordinate_localization, Kernel};
use crate::linalg::{op_norm_sym, sym_eigen};
use crate::localization::{coord_enumerate, nf_simulate, simulate_many, Functional, LocEnsemble, NfOptions, Scheme, DEFAULT_BUDGET};
use crate::measure::SpinMeasure;
use crate::models::{
    build_graph_ising, build_hardcore, build_ising, gaussian_fields, graph_coupling, gks_monotonicity_check,
    hardcore_marginal_suite, uniqueness_margin, Convention, Graph, HardcoreSpec, IsingSpec,
};
use crate::report::{all_pass, summarize, tightest, CheckRecord};
use crate::rng;
use crate::spectra::{
    exp_normalized, fact_mixing_consistency, generalized_min_eigen, log_ascent, mlsi_adversarial, spectral_gap,
    worst_mixing_time, MlsiOptions, DEFAULT_MIX_CAP,
};
use crate::stability::{
    alo_bound, clv_bound, h_stability_levels, marginals_away_from_one, si_all_pinnings, tame_marginals_check, TiltScan,
    DEFAULT_PIN_BUDGET,
};

/// Exact and adversarial quantities of the chain a pipeline bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Brackets {
    pub exact_gap: Option<f64>,
    /// Adversarial upper estimate of the MLSI coefficient.
    pub mlsi_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pipeline: String,
    pub instance: String,
    pub ingredients: Vec<CheckRecord>,
    pub assembled_bound: f64,
    pub brackets: Brackets,
    /// Reported, never asserted.
    pub fitted_constants: BTreeMap<String, f64>,
}

impl PipelineReport {
    pub fn pass(&self) -> bool {
        all_pass(&self.ingredients)
    }
}

fn mlsi_upper(k: &Kernel, opts: &MlsiOptions, seed: u64) -> Result<f64> {
    match mlsi_adversarial(k, opts, seed) {
        Ok(e) => Ok(e.upper),
        // A one-state chain is already at equilibrium.
        Err(Error::DegenerateEntropy) => Ok(1.0),
        Err(e) => Err(e),
    }
}

/// Glauber kernel of `nu` with its gap and adversarial MLSI upper estimate.
pub fn glauber_brackets(nu: &SpinMeasure, opts: &MlsiOptions, seed: u64) -> Result<(Kernel, Brackets)> {
    let k = glauber(nu)?;
    let gap = spectral_gap(&k)?.gap;
    let upper = mlsi_upper(&k, opts, seed)?;
    Ok((k, Brackets { exact_gap: Some(gap), mlsi_upper: Some(upper) }))
}

fn bracket_checks(name: &str, instance: &str, bound: f64, br: &Brackets, tol: f64) -> Vec<CheckRecord> {
    let mut out = Vec::new();
    if let Some(g) = br.exact_gap {
        out.push(CheckRecord::le(&format!("{name}_le_gap"), instance, bound, g, tol));
    }
    if let Some(u) = br.mlsi_upper {
        out.push(CheckRecord::le(&format!("{name}_le_mlsi_upper"), instance, bound, u, tol));
    }
    out
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

fn unit_grid(points: usize) -> Vec<f64> {
    let p = points.max(2);
    (0..p).map(|k| k as f64 / (p - 1) as f64).collect()
}

fn shifted(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

// ---------------------------------------------------------------------------
// Annealing by concatenation.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnealMode {
    Variance,
    Entropy,
}

/// Run `initial` for `stop` steps, then bound the `final_scheme` chain with
/// parameter `tau` by `epsilon * delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealPlan {
    pub initial: Scheme,
    /// Deterministic stopping time of the initial scheme.
    pub stop: usize,
    pub final_scheme: Scheme,
    pub tau: usize,
    /// Conservation factor in `[0, 1]`; 0 until measured.
    pub epsilon: f64,
    /// Smallest inner constant over the realized measures; 0 until measured.
    pub delta: f64,
    /// `epsilon * delta`.
    pub bound: f64,
}

impl AnnealPlan {
    pub fn coordinate(stop: usize, tau: usize) -> Self {
        Self {
            initial: Scheme::Coordinate,
            stop,
            final_scheme: Scheme::Coordinate,
            tau,
            epsilon: 0.0,
            delta: 0.0,
            bound: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealReport {
    pub plan: AnnealPlan,
    pub mode: AnnealMode,
    /// Gap (variance mode) or adversarial MLSI upper (entropy mode) of the
    /// final-scheme chain on the original measure.
    pub target: f64,
    pub members: usize,
    pub checks: Vec<CheckRecord>,
}

/// Coordinate-localization kernel with `tau` capped at the free count: past
/// that point every coordinate is revealed and the kernel is the identity.
pub fn doob_kernel(nu: &SpinMeasure, tau: usize) -> Result<Kernel> {
    kernel_from_coordinate_localization(nu, tau.min(nu.num_free()))
}

fn inner_constant(k: &Kernel, mode: AnnealMode, opts: &MlsiOptions, seed: u64) -> Result<f64> {
    if k.len() == 1 {
        return Ok(1.0);
    }
    match mode {
        AnnealMode::Variance => Ok(spectral_gap(k)?.gap),
        AnnealMode::Entropy => mlsi_upper(k, opts, seed),
    }
}

/// Ensemble members as sparse laws over the support of the root measure.
struct Layout {
    pi: Vec<f64>,
    members: Vec<(f64, Vec<(usize, f64)>)>,
}

fn layout(nu: &SpinMeasure, ens: &LocEnsemble) -> Layout {
    let (states, pi): (Vec<usize>, Vec<f64>) = nu.support().unzip();
    let members = ens
        .members
        .iter()
        .map(|(w, m)| {
            let q = m.support().map(|(x, p)| (states.binary_search(&x).expect("member inside support"), p)).collect();
            (*w, q)
        })
        .collect();
    Layout { pi, members }
}

/// `inf_φ E[Var_{ν_𝔞} φ] / Var_ν φ` as the bottom of a generalized eigenproblem.
fn variance_conservation(l: &Layout) -> Result<f64> {
    let m = l.pi.len();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (w, q) in &l.members {
        for &(x, qx) in q {
            a[(x, x)] += w * qx;
            for &(y, qy) in q {
                a[(x, y)] -= w * qx * qy;
            }
        }
    }
    generalized_min_eigen(&a, &l.pi)
}

/// `Ent_q f`; adds `scale · ∂Ent_q f / ∂f` into `grad`.
fn ent_with_grad(q: &[(usize, f64)], f: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let mass: f64 = q.iter().map(|&(x, p)| p * f[x]).sum();
    if mass <= 0.0 {
        return 0.0;
    }
    let lm = mass.ln();
    let mut e = 0.0;
    for &(x, p) in q {
        let d = f[x].max(1e-300).ln() - lm;
        e += p * f[x] * d;
        grad[x] += scale * p * d;
    }
    e
}

/// Adversarial minimum of `E[Ent_{ν_𝔞} f] / Ent_ν f`; an upper estimate of the
/// true infimum.
fn entropy_conservation(l: &Layout, opts: &MlsiOptions, seed: u64) -> f64 {
    let m = l.pi.len();
    if m < 2 {
        return 1.0;
    }
    let full: Vec<(usize, f64)> = l.pi.iter().cloned().enumerate().collect();
    let obj = |theta: &[f64]| {
        let f = exp_normalized(theta);
        let mut g0 = vec![0.0; m];
        let e0 = ent_with_grad(&full, &f, 1.0, &mut g0);
        if e0 <= 1e-300 {
            return (-1.0, vec![0.0; m]);
        }
        let mut g1 = vec![0.0; m];
        let e1: f64 = l.members.iter().map(|(w, q)| w * ent_with_grad(q, &f, *w, &mut g1)).sum();
        let r = e1 / e0;
        let grad = (0..m).map(|x| -f[x] * (g1[x] - r * g0[x]) / e0).collect();
        (-r, grad)
    };
    let starts: Vec<Vec<f64>> = (0..opts.restarts.max(1))
        .map(|r| {
            let mut g = rng::stream(seed, r as u64);
            if r % 2 == 0 {
                let x = g.random_range(0..m);
                let depth: f64 = g.random_range(0.5..20.0);
                (0..m).map(|y| if y == x { 0.0 } else { -depth }).collect()
            } else {
                let s: f64 = g.random_range(0.01..5.0);
                (0..m).map(|_| s * g.sample::<f64, _>(StandardNormal)).collect()
            }
        })
        .collect();
    let best = starts
        .into_par_iter()
        .map(|t| log_ascent(&obj, t, opts).0)
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    -best
}

/// Measures the plan's conservation factor and inner constant, then compares
/// their product with the final-scheme chain on `nu` itself.
pub fn anneal_bound(
    nu: &SpinMeasure,
    plan: &AnnealPlan,
    mode: AnnealMode,
    opts: &MlsiOptions,
    seed: u64,
) -> Result<AnnealReport> {
    if plan.final_scheme != Scheme::Coordinate {
        return Err(Error::NotDoobFinalScheme);
    }
    if plan.initial != Scheme::Coordinate {
        return Err(Error::PreconditionViolated(
            "exact annealing ensembles exist only for the coordinate scheme".into(),
        ));
    }
    let stop = plan.stop.min(nu.num_free());
    let ens = coord_enumerate(nu, stop, DEFAULT_BUDGET)?;
    let lay = layout(nu, &ens);
    let eps_var = variance_conservation(&lay)?;
    // Entropy ratios at f = 1 + sφ tend to variance ratios, so the variance
    // infimum also caps the entropy infimum.
    let epsilon = match mode {
        AnnealMode::Variance => eps_var,
        AnnealMode::Entropy => entropy_conservation(&lay, opts, seed).min(eps_var),
    }
    .clamp(0.0, 1.0);
    let deltas: Vec<f64> = ens
        .members
        .par_iter()
        .enumerate()
        .map(|(i, (_, m))| inner_constant(&doob_kernel(m, plan.tau)?, mode, opts, rng::child_seed(seed, i as u64 + 1)))
        .collect::<Result<_>>()?;
    let delta = deltas.iter().cloned().fold(1.0, f64::min).clamp(0.0, 1.0);
    let target = inner_constant(&doob_kernel(nu, plan.tau)?, mode, opts, rng::child_seed(seed, 0))?;
    let bound = epsilon * delta;
    let instance = format!("stop={stop} tau={} {mode:?}", plan.tau);
    let tol = match mode {
        AnnealMode::Variance => 1e-9,
        AnnealMode::Entropy => 1e-6,
    };
    let checks = vec![
        CheckRecord::le("anneal_product_le_target", &instance, bound, target, tol),
        CheckRecord::le("anneal_epsilon_le_one", &instance, epsilon, 1.0, 1e-12),
    ];
    Ok(AnnealReport {
        plan: AnnealPlan { stop, epsilon, delta, bound, ..plan.clone() },
        mode,
        target,
        members: ens.members.len(),
        checks,
    })
}

/// `∫ φ·Pφ dμ` (variance) or `∫ Pf log Pf dμ` (entropy) for `P = P^{(coord, τ)}(μ)`.
fn doob_values(mu: &SpinMeasure, tau: usize, phis: &[Vec<f64>], fs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = doob_kernel(mu, tau)?;
    let mut out = Vec::with_capacity(phis.len() + fs.len());
    for phi in phis {
        let p = DVector::from_vec(k.from_cube_function(phi));
        let pp = &k.p * &p;
        out.push((0..k.len()).map(|x| k.pi[x] * p[x] * pp[x]).sum());
    }
    for f in fs {
        let pf = &k.p * DVector::from_vec(k.from_cube_function(f));
        out.push((0..k.len()).map(|x| if pf[x] > 0.0 { k.pi[x] * pf[x] * pf[x].ln() } else { 0.0 }).sum());
    }
    Ok(out)
}

/// `E[X_t]` for `t = 0..=free` along the coordinate scheme, where `X_t` is the
/// quadratic form (variance) or `∫ Pf log Pf` (entropy) of `P^{(coord, τ)}(ν_t)`.
pub fn submartingale_means(nu: &SpinMeasure, tau: usize, functional: Functional<'_>) -> Result<Vec<f64>> {
    let (phis, fs) = match functional {
        Functional::Variance(p) => (vec![p.to_vec()], vec![]),
        Functional::Entropy(f) => (vec![], vec![f.to_vec()]),
    };
    (0..=nu.num_free())
        .map(|t| {
            let ens = coord_enumerate(nu, t, DEFAULT_BUDGET)?;
            let mut acc = 0.0;
            for (w, m) in &ens.members {
                acc += w * doob_values(m, tau, &phis, &fs)?[0];
            }
            Ok(acc)
        })
        .collect()
}

/// Exact one-step conditional check `X_t <= E[X_{t+1} | ν_t]` for every member
/// of every coordinate ensemble. One record per test function, at its tightest
/// step.
pub fn submartingale_check(
    nu: &SpinMeasure,
    tau: usize,
    phis: &[Vec<f64>],
    fs: &[Vec<f64>],
    instance: &str,
) -> Result<Vec<CheckRecord>> {
    let nfun = phis.len() + fs.len();
    let mut per_fun: Vec<Vec<CheckRecord>> = vec![Vec::new(); nfun];
    for t in 0..nu.num_free() {
        let ens = coord_enumerate(nu, t, DEFAULT_BUDGET)?;
        let rows: Vec<(Vec<f64>, Vec<f64>)> = ens
            .members
            .par_iter()
            .map(|(_, m)| {
                let now = doob_values(m, tau, phis, fs)?;
                let mut next = vec![0.0; nfun];
                for (w, c) in &coord_enumerate(m, 1, DEFAULT_BUDGET)?.members {
                    for (acc, v) in next.iter_mut().zip(doob_values(c, tau, phis, fs)?) {
                        *acc += w * v;
                    }
                }
                Ok((now, next))
            })
            .collect::<Result<_>>()?;
        for (k, (now, next)) in rows.iter().enumerate() {
            for i in 0..nfun {
                let (name, idx) = if i < phis.len() { ("submart_dirichlet", i) } else { ("submart_entropy", i - phis.len()) };
                per_fun[i].push(CheckRecord::le(
                    name,
                    &format!("{instance} fn#{idx} t={t} member#{k}"),
                    now[i],
                    next[i],
                    1e-10,
                ));
            }
        }
    }
    Ok(per_fun.into_iter().filter_map(tightest).collect())
}

// ---------------------------------------------------------------------------
// Ising: stochastic-localization annealing.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkOptions {
    /// Random external fields per interpolation point, besides the zero field.
    pub fields: usize,
    pub field_sigma: f64,
    pub lambda_points: usize,
    /// Fields at which the product endpoint is checked, besides the zero field.
    pub endpoint_fields: usize,
    pub mlsi: MlsiOptions,
    pub seed: u64,
}

impl Default for SkOptions {
    fn default() -> Self {
        Self {
            fields: 50,
            field_sigma: 1.0,
            lambda_points: 11,
            endpoint_fields: 3,
            mlsi: MlsiOptions { restarts: 30, ..MlsiOptions::default() },
            seed: 0,
        }
    }
}

/// `∫_0^1 dλ / (1 - 2(1-λ)a)` for `0 <= a < 1/2`.
pub fn sk_alpha_integral(a: f64) -> f64 {
    if a < 1e-12 {
        1.0 + a
    } else {
        -(1.0 - 2.0 * a).ln() / (2.0 * a)
    }
}

/// Glauber MLSI lower bound `(1/n) exp(-2‖J‖ ∫α)` obtained by annealing with
/// stochastic localization driven by `(2J)^{1/2}`. The interpolating measures
/// are `Ising((1-λ)J, v0 + v)`; for `‖J‖ < 1/2` their covariance bound
/// `α(λ) = 1/(1 - 2(1-λ)‖J‖)` is checked over a field scan, otherwise `α(λ)`
/// is replaced by the largest scanned covariance norm (a lower estimate).
pub fn theorem_sk_pipeline(spec: &IsingSpec, opts: &SkOptions) -> Result<PipelineReport> {
    spec.validate()?;
    if spec.convention != Convention::Standard {
        return Err(Error::PreconditionViolated("expected exp(<x, Jx> + <v, x>) convention".into()));
    }
    let n = spec.n();
    let a = spec.op_norm();
    let min_eig = sym_eigen(&spec.j).0.first().copied().unwrap_or(0.0);
    if min_eig < -1e-12 {
        return Err(Error::PreconditionViolated(format!("J must be positive semidefinite (min eigenvalue {min_eig})")));
    }
    let instance = format!("ising n={n} norm={a:.4}");
    let corollary = a < 0.5;
    let nu = build_ising(spec)?;
    let mut fields = vec![vec![0.0; n]];
    fields.extend(gaussian_fields(n, opts.fields, opts.field_sigma, &mut rng::stream(opts.seed, 0)));
    let lambdas = unit_grid(opts.lambda_points);
    let covs: Vec<Vec<f64>> = lambdas
        .par_iter()
        .map(|&lam| {
            fields
                .iter()
                .map(|v| {
                    let m = build_ising(&IsingSpec::new(&spec.j * (1.0 - lam), shifted(&spec.v, v))?)?;
                    Ok(op_norm_sym(&m.moments().cov))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let alpha = |lam: f64| 1.0 / (1.0 - 2.0 * (1.0 - lam) * a);
    let mut ingredients = Vec::new();
    let mut fitted = BTreeMap::new();
    fitted.insert("norm_J".to_string(), a);
    let integral = if corollary {
        let mut worst_ratio = 0.0_f64;
        for (&lam, row) in lambdas.iter().zip(&covs) {
            let recs = row
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    worst_ratio = worst_ratio.max(c / alpha(lam));
                    CheckRecord::le("sk_cov_hypothesis", &format!("{instance} lambda={lam:.3} field#{i}"), c, alpha(lam), 1e-9)
                })
                .collect();
            ingredients.extend(tightest(recs));
        }
        fitted.insert("max_cov_over_alpha".to_string(), worst_ratio);
        let fine = unit_grid(4001);
        let numeric = trapezoid(&fine, &fine.iter().map(|&l| alpha(l)).collect::<Vec<_>>());
        let closed = sk_alpha_integral(a);
        ingredients.push(CheckRecord::eq("sk_alpha_integral", &instance, numeric, closed, 1e-6));
        closed
    } else {
        let scanned: Vec<f64> = covs.iter().map(|r| r.iter().cloned().fold(0.0, f64::max)).collect();
        let integral = trapezoid(&lambdas, &scanned);
        fitted.insert("alpha_integral_scanned".to_string(), integral);
        integral
    };
    fitted.insert("alpha_integral".to_string(), integral);

    // Product endpoint: Glauber on a product measure has gap exactly 1/n and
    // MLSI coefficient at least 1/n.
    let endpoint: Vec<Vec<CheckRecord>> = fields
        .par_iter()
        .take(opts.endpoint_fields + 1)
        .enumerate()
        .map(|(i, v)| {
            let m = build_ising(&IsingSpec::new(DMatrix::zeros(n, n), shifted(&spec.v, v))?)?;
            let k = glauber(&m)?;
            let label = format!("{instance} endpoint field#{i}");
            let gap = spectral_gap(&k)?.gap;
            let upper = mlsi_upper(&k, &opts.mlsi, rng::child_seed(opts.seed, 100 + i as u64))?;
            Ok(vec![
                CheckRecord::eq("sk_endpoint_gap", &label, gap, 1.0 / n as f64, 1e-10),
                CheckRecord::le("sk_endpoint_mlsi", &label, 1.0 / n as f64, upper, 1e-9),
            ])
        })
        .collect::<Result<_>>()?;
    ingredients.extend(endpoint.into_iter().flatten());

    let bound = (-2.0 * a * integral).exp() / n as f64;
    if corollary {
        ingredients.push(CheckRecord::eq("sk_corollary_form", &instance, bound, (1.0 - 2.0 * a) / n as f64, 1e-12));
    }
    let (_, brackets) = glauber_brackets(&nu, &opts.mlsi, rng::child_seed(opts.seed, 1))?;
    ingredients.extend(bracket_checks("sk_bound", &instance, bound, &brackets, 1e-9));
    Ok(PipelineReport {
        pipeline: "theorem-sk".into(),
        instance,
        ingredients,
        assembled_bound: bound,
        brackets,
        fitted_constants: fitted,
    })
}

// ---------------------------------------------------------------------------
// Ising on graphs.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphIsingOptions {
    /// Interpolation points for the inverse temperature or coupling scale.
    pub points: usize,
    /// Random tilts per point, besides the zero tilt and the model's own field.
    pub fields: usize,
    pub field_sigma: f64,
    pub mlsi: MlsiOptions,
    pub seed: u64,
}

impl Default for GraphIsingOptions {
    fn default() -> Self {
        Self { points: 6, fields: 20, field_sigma: 1.0, mlsi: MlsiOptions { restarts: 30, ..MlsiOptions::default() }, seed: 0 }
    }
}

/// Positive semidefinite `J` whose Ising measure equals `exp(β · #monochromatic)`
/// up to normalization: `(β/2) J_G` for `β >= 0`, `(|β|/2)(ΔI - J_G)` otherwise.
pub fn signed_graph_coupling(g: &Graph, beta: f64) -> DMatrix<f64> {
    let jg = graph_coupling(g);
    if beta >= 0.0 {
        jg * (beta / 2.0)
    } else {
        let n = g.n();
        (DMatrix::<f64>::identity(n, n) * g.max_degree() as f64 - jg) * (-beta / 2.0)
    }
}

/// Glauber MLSI lower bound from uniqueness: spectral independence at most
/// `2/δ` under every tilt along `β' ∈ [0, β]` gives `(1/n) exp(-4‖J‖/δ)`,
/// which is at least the closed form `(1/n) e^{-8/δ}` whenever `‖J‖ <= 2`.
pub fn graphical_ising_bound(g: &Graph, beta: f64, v: &[f64], opts: &GraphIsingOptions) -> Result<PipelineReport> {
    let delta = uniqueness_margin(g, beta)?.ok_or(Error::NotUnique)?;
    let n = g.n();
    let j = signed_graph_coupling(g, beta);
    let norm = op_norm_sym(&j);
    let instance = format!("graph-ising n={n} beta={beta}");
    let nu = build_graph_ising(g, beta, v)?;
    let mut tilts = vec![vec![0.0; n], v.to_vec()];
    tilts.extend(
        gaussian_fields(n, opts.fields, opts.field_sigma, &mut rng::stream(opts.seed, 0)).into_iter().map(|w| shifted(v, &w)),
    );
    let si_bound = 2.0 / delta;
    let betas: Vec<f64> = unit_grid(opts.points).into_iter().map(|s| s * beta).collect();
    let rows: Vec<(CheckRecord, f64)> = betas
        .par_iter()
        .map(|&b| {
            let vals = tilts.iter().map(|w| Ok(build_graph_ising(g, b, w)?.si_radius())).collect::<Result<Vec<f64>>>()?;
            let top = vals.iter().cloned().fold(0.0, f64::max);
            let recs = vals
                .iter()
                .enumerate()
                .map(|(i, &s)| CheckRecord::le("si_under_tilts", &format!("{instance} beta'={b:.4} tilt#{i}"), s, si_bound, 1e-9))
                .collect();
            Ok((tightest(recs).expect("at least one tilt"), top))
        })
        .collect::<Result<_>>()?;
    let si_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let mut ingredients: Vec<CheckRecord> = rows.into_iter().map(|r| r.0).collect();
    let bound = (-4.0 * norm / delta).exp() / n as f64;
    let closed = (-8.0 / delta).exp() / n as f64;
    ingredients.push(CheckRecord::le("graphical_norm_at_most_two", &instance, norm, 2.0, 1e-12));
    ingredients.push(CheckRecord::le("graphical_closed_form_le_bound", &instance, closed, bound, 0.0));
    let (_, brackets) = glauber_brackets(&nu, &opts.mlsi, rng::child_seed(opts.seed, 1))?;
    ingredients.extend(bracket_checks("graphical_bound", &instance, bound, &brackets, 1e-9));
    ingredients.extend(bracket_checks("graphical_closed_form", &instance, closed, &brackets, 1e-9));
    let fitted = BTreeMap::from([
        ("delta".to_string(), delta),
        ("norm_J".to_string(), norm),
        ("si_max".to_string(), si_max),
        ("si_max_times_delta".to_string(), si_max * delta),
        ("closed_form_bound".to_string(), closed),
    ]);
    Ok(PipelineReport {
        pipeline: "graphical-ising".into(),
        instance,
        ingredients,
        assembled_bound: bound,
        brackets,
        fitted_constants: fitted,
    })
}

/// Ferromagnetic bound `(1/n) exp(-2‖J‖ ∫χ)` with `χ(λ) = ‖Cov(ν_{λJ,0})‖`,
/// integrated by the trapezoid rule. The right-endpoint sum, an upper bound for
/// the integral of a nondecreasing `χ`, is reported alongside.
pub fn ferro_susceptibility_bound(g: &Graph, beta: f64, opts: &GraphIsingOptions) -> Result<PipelineReport> {
    if beta < 0.0 {
        let (a, b) = g.edges().first().copied().unwrap_or((0, 0));
        return Err(Error::NotFerromagnetic(a, b));
    }
    let n = g.n();
    let j = graph_coupling(g) * (beta / 2.0);
    let norm = op_norm_sym(&j);
    let instance = format!("ferro n={n} beta={beta}");
    let lambdas = unit_grid(opts.points.max(11));
    let chi: Vec<f64> = lambdas
        .par_iter()
        .map(|&l| Ok(op_norm_sym(&build_ising(&IsingSpec::new(&j * l, vec![0.0; n])?)?.moments().cov)))
        .collect::<Result<_>>()?;
    let mut ingredients = Vec::new();
    let mono = chi
        .windows(2)
        .zip(&lambdas)
        .map(|(c, l)| CheckRecord::le("chi_monotone", &format!("{instance} lambda={l:.3}"), c[0], c[1], 1e-12))
        .collect();
    ingredients.extend(tightest(mono));
    let fields = gaussian_fields(n, opts.fields, opts.field_sigma, &mut rng::stream(opts.seed, 0));
    ingredients.extend(tightest(gks_monotonicity_check(&j, &fields)?));
    let integral = trapezoid(&lambdas, &chi);
    let upper_integral: f64 = lambdas.windows(2).zip(&chi[1..]).map(|(l, c)| (l[1] - l[0]) * c).sum();
    let bound = (-2.0 * norm * integral).exp() / n as f64;
    let nu = build_graph_ising(g, beta, &vec![0.0; n])?;
    let (_, brackets) = glauber_brackets(&nu, &opts.mlsi, rng::child_seed(opts.seed, 1))?;
    ingredients.extend(bracket_checks("ferro_bound", &instance, bound, &brackets, 1e-9));
    let fitted = BTreeMap::from([
        ("norm_J".to_string(), norm),
        ("chi_integral".to_string(), integral),
        ("chi_integral_upper".to_string(), upper_integral),
        ("bound_from_upper_integral".to_string(), (-2.0 * norm * upper_integral).exp() / n as f64),
    ]);
    Ok(PipelineReport {
        pipeline: "ferro-susceptibility".into(),
        instance,
        ingredients,
        assembled_bound: bound,
        brackets,
        fitted_constants: fitted,
    })
}

// ---------------------------------------------------------------------------
// Hardcore: negative-field annealing.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardcoreOptions {
    /// Annealing horizon; the tilted fugacity at the end is `e^{-2s} λ`.
    pub s: f64,
    pub tilt_points: usize,
    pub nf_paths: usize,
    /// Random test functions for the conservation estimate.
    pub nf_functions: usize,
    pub mix_eps: f64,
    pub mlsi: MlsiOptions,
    pub seed: u64,
    pub budget: u128,
}

impl Default for HardcoreOptions {
    fn default() -> Self {
        Self {
            s: 2.0,
            tilt_points: 9,
            nf_paths: 400,
            nf_functions: 6,
            mix_eps: 0.25,
            mlsi: MlsiOptions { restarts: 20, ..MlsiOptions::default() },
            seed: 0,
            budget: DEFAULT_PIN_BUDGET,
        }
    }
}

struct TiltRow {
    records: Vec<CheckRecord>,
    si: f64,
    tame: f64,
}

fn hardcore_tilt_row(g: &Graph, lambda: f64, nu: &SpinMeasure, t: f64, delta: f64, budget: u128, instance: &str) -> Result<TiltRow> {
    let n = g.n();
    let spec_t = HardcoreSpec::new(g.clone(), (-2.0 * t).exp() * lambda)?;
    let nu_t = build_hardcore(&spec_t)?;
    let label = format!("{instance} t={t:.3}");
    let diff = nu.tilt(&vec![-t; n]).max_abs_diff(&nu_t);
    let si = si_all_pinnings(&nu_t, budget)?.constant;
    let tame = tame_marginals_check(&nu_t, None, budget)?.constant;
    let away = marginals_away_from_one(&nu_t, budget)?;
    let k = tame.max(away);
    let mut records = vec![
        CheckRecord::eq("hardcore_tilt_identity", &label, diff, 0.0, 1e-12),
        CheckRecord::le("hardcore_si_all_pinnings", &label, si, 144.0 / delta, 1e-9),
        CheckRecord::le("hardcore_tame_finite", &label, k, 30f64.exp(), 0.0),
    ];
    records.extend(summarize(hardcore_marginal_suite(&spec_t)?));
    Ok(TiltRow { records, si, tame: k })
}

/// Negative-field conservation `E[Ent_{ν_s} f] / Ent_ν f` by Monte Carlo, as
/// (smallest mean ratio over the test functions, its standard error).
fn nf_conservation(nu: &SpinMeasure, k: &Kernel, opts: &HardcoreOptions) -> Result<(f64, f64)> {
    let paths = simulate_many(opts.nf_paths, |task| nf_simulate(nu, opts.s, &NfOptions::default(), opts.seed, task + 1))?;
    let dim = 1usize << nu.n();
    let mut tests: Vec<Vec<f64>> = Vec::new();
    let w = spectral_gap(k)?.witness;
    let wmax = w.iter().fold(0.0_f64, |a, x| a.max(x.abs())).max(1e-300);
    tests.push(k.to_cube_function(&w.iter().map(|x| 1.0 + 0.5 * x / wmax).collect::<Vec<_>>()));
    let mut empty = vec![0.0; dim];
    empty[0] = 1.0;
    tests.push(empty);
    for r in 0..opts.nf_functions {
        let mut g = rng::stream(opts.seed, 1_000_000 + r as u64);
        tests.push((0..dim).map(|_| (1.5 * g.sample::<f64, _>(StandardNormal)).exp()).collect());
    }
    let mut best = (f64::INFINITY, 0.0);
    for f in &tests {
        let e0 = nu.entropy(f)?;
        if e0 <= 1e-14 {
            continue;
        }
        let ratios = paths.iter().map(|p| Ok(p.last().entropy(f)? / e0)).collect::<Result<Vec<f64>>>()?;
        let m = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / m;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        if mean < best.0 {
            best = (mean, (var / m).sqrt());
        }
    }
    Ok(best)
}

/// Ingredient suite and assembled MLSI bound for Glauber dynamics on the
/// hardcore model in the `δ`-uniqueness regime, plus measured mixing times.
pub fn hardcore_pipeline(g: &Graph, lambda: f64, opts: &HardcoreOptions) -> Result<PipelineReport> {
    let spec = HardcoreSpec::new(g.clone(), lambda)?;
    let delta = spec.uniqueness_delta();
    if delta <= 0.0 {
        return Err(Error::NotUnique);
    }
    let n = g.n();
    let instance = format!("hardcore n={n} lambda={lambda}");
    let nu = build_hardcore(&spec)?;
    let ts: Vec<f64> = unit_grid(opts.tilt_points).into_iter().map(|x| x * opts.s).collect();
    let rows: Vec<TiltRow> = ts
        .par_iter()
        .map(|&t| hardcore_tilt_row(g, lambda, &nu, t, delta, opts.budget, &instance))
        .collect::<Result<_>>()?;
    let eta = rows.iter().map(|r| r.si).fold(0.0, f64::max);
    let kk = rows.iter().map(|r| r.tame).fold(1.0, f64::max);
    let mut ingredients: Vec<CheckRecord> = rows.into_iter().flat_map(|r| r.records).collect();

    // Small-fugacity endpoint: λ e^{-2s} <= 1/(2Δ) gives ρ_LS >= 1/(4n).
    let floor = 1.0 / (4.0 * n as f64);
    let lam_s = (-2.0 * opts.s).exp() * lambda;
    let dd = spec.threshold_degree() as f64;
    let nu_s = build_hardcore(&HardcoreSpec::new(g.clone(), lam_s)?)?;
    let upper_s = mlsi_upper(&glauber(&nu_s)?, &opts.mlsi, rng::child_seed(opts.seed, 2))?;
    let label = format!("{instance} endpoint lambda={lam_s:.5}");
    ingredients.push(if lam_s <= 1.0 / (2.0 * dd) {
        CheckRecord::le("hardcore_small_fugacity_endpoint", &label, floor, upper_s, 1e-9)
    } else {
        CheckRecord::info("hardcore_small_fugacity_endpoint", &label, floor, upper_s)
    });

    let (k, brackets) = glauber_brackets(&nu, &opts.mlsi, rng::child_seed(opts.seed, 1))?;
    let (eps_nf, se) = nf_conservation(&nu, &k, opts)?;
    let eps_c = eps_nf.min(1.0);
    let explicit = (-64.0 * kk * kk * opts.s.exp() * eta).exp();
    ingredients.push(CheckRecord::le("hardcore_nf_conservation_explicit", &instance, explicit, eps_nf + 4.0 * se, 0.0));
    let bound = floor * eps_c;
    ingredients.extend(bracket_checks("hardcore_bound", &instance, bound, &brackets, floor * 4.0 * se + 1e-9));

    let t_mix = worst_mixing_time(&k, opts.mix_eps, DEFAULT_MIX_CAP)? as f64;
    let nf = n as f64;
    let scale = nf * nf.ln() + 3.0 * nf * (1.0 / opts.mix_eps).ln();
    ingredients.extend(fact_mixing_consistency(&k, opts.mix_eps, brackets.mlsi_upper, &instance)?);

    let neg_log = -eps_c.max(1e-300).ln();
    let fitted = BTreeMap::from([
        ("delta".to_string(), delta),
        ("eta_measured".to_string(), eta),
        ("eta_claimed".to_string(), 144.0 / delta),
        ("k_measured".to_string(), kk),
        ("nf_conservation".to_string(), eps_nf),
        ("nf_conservation_se".to_string(), se),
        ("c_fit_k4".to_string(), neg_log / (kk.powi(4) * eta)),
        ("c_fit_k3".to_string(), neg_log / (kk.powi(3) * eta)),
        ("c_fit_explicit".to_string(), neg_log / (64.0 * kk * kk * opts.s.exp() * eta)),
        ("t_mix".to_string(), t_mix),
        ("t_mix_ratio".to_string(), t_mix / scale),
    ]);
    Ok(PipelineReport {
        pipeline: "hardcore".into(),
        instance,
        ingredients,
        assembled_bound: bound,
        brackets,
        fitted_constants: fitted,
    })
}

/// Direction checks for the pinning-product bounds: the spectral-independence
/// product sits below the Glauber gap, the H-stability product below the
/// adversarial MLSI upper estimate.
pub fn alo_clv_checks(
    nu: &SpinMeasure,
    brackets: &Brackets,
    scan: &TiltScan,
    budget: u128,
    instance: &str,
) -> Result<Vec<CheckRecord>> {
    let nu = nu.collapse_deterministic();
    let m = nu.num_free();
    let alo = alo_bound(&si_all_pinnings(&nu, budget)?, m, 1);
    let clv = clv_bound(&h_stability_levels(&nu, scan, budget)?, m, 1);
    let mut out = Vec::new();
    if let Some(g) = brackets.exact_gap {
        out.push(CheckRecord::le("alo_product_le_gap", instance, alo, g, 1e-9));
    }
    if let Some(u) = brackets.mlsi_upper {
        out.push(CheckRecord::le("clv_product_le_mlsi_upper", instance, clv, u, 1e-9));
    }
    Ok(out)
}
