//! Run configuration: a JSON file merged with command-line overrides, then
//! resolved into the settings that are hashed into every report.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use locmix::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Chain {
    Glauber,
    LGlauber,
    Rgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Coordinate,
    Stochastic,
    NegativeFields,
}

/// Driving matrix for stochastic localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Driver {
    Identity,
    /// `(2J)^{1/2}` from an Ising model.
    Coupling,
}

/// A model given by path (relative to the config file) or inline.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(PathBuf),
    Inline(ModelSpec),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolConfig {
    pub grad: Option<f64>,
    pub max_se: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub pinnings: Option<u64>,
    pub restarts: Option<usize>,
    pub samples: Option<usize>,
    pub mix_cap: Option<usize>,
}

/// Contents of a `--config` file. Every field is optional; flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelRef>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub chain: Option<Chain>,
    pub l: Option<usize>,
    pub eta: Option<f64>,
    pub mix_eps: Option<Vec<f64>>,
    pub certificates: Option<Vec<String>>,
    pub radii: Option<Vec<f64>>,
    pub directions: Option<usize>,
    pub scheme: Option<SchemeName>,
    pub driver: Option<Driver>,
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub pipeline: Option<String>,
    pub mu: Option<f64>,
    pub points: Option<usize>,
    pub measures: Option<usize>,
    pub functions: Option<usize>,
    #[serde(default)]
    pub tol: TolConfig,
    #[serde(default)]
    pub budget: BudgetConfig,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Secondary CSV table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON-lines path trace (`simulate`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub chain: Option<Chain>,
    /// Subset size for `l-glauber`.
    #[arg(long)]
    pub l: Option<usize>,
    /// Step size for restricted Gaussian dynamics.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Total-variation targets for the mixing-time table (repeatable).
    #[arg(long = "mix-eps")]
    pub mix_eps: Vec<f64>,
    /// Certificate kind (repeatable): si-pinnings, cor-tilts, ent-stab-quad,
    /// ent-stab-h, tame-marginals, bounded-marginals.
    #[arg(long = "cert")]
    pub certificates: Vec<String>,
    /// Tilt-scan radius (repeatable).
    #[arg(long = "radius")]
    pub radii: Vec<f64>,
    /// Tilt-scan directions per radius.
    #[arg(long)]
    pub directions: Option<usize>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeName>,
    #[arg(long, value_enum)]
    pub driver: Option<Driver>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Time horizon (steps for the coordinate scheme).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Pipeline name: theorem-sk, graphical-ising, ferro, hardcore, rgo.
    #[arg(long = "name")]
    pub pipeline: Option<String>,
    /// Convexity modulus of the Gaussian target (`rgo`).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Grid size (`rgo`).
    #[arg(long)]
    pub points: Option<usize>,
    /// Random measures in the identity suite (`verify`).
    #[arg(long)]
    pub measures: Option<usize>,
    /// Random test functions per measure (`verify`).
    #[arg(long)]
    pub functions: Option<usize>,
    #[arg(long = "tol.grad")]
    pub tol_grad: Option<f64>,
    /// Largest accepted per-entry standard error of a sampled kernel.
    #[arg(long = "tol.max-se")]
    pub tol_max_se: Option<f64>,
    /// Largest pinning enumeration.
    #[arg(long = "budget.pinnings")]
    pub budget_pinnings: Option<u64>,
    /// Random restarts of the entropy-ratio search.
    #[arg(long = "budget.restarts")]
    pub budget_restarts: Option<usize>,
    /// Monte Carlo samples per kernel row (`rgd`).
    #[arg(long = "budget.samples")]
    pub budget_samples: Option<usize>,
    /// Step cap of mixing-time computations.
    #[arg(long = "budget.mix-cap")]
    pub budget_mix_cap: Option<usize>,
}

/// Fully defaulted settings. Output paths are excluded so that the same run
/// written to different files hashes identically.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub command: String,
    pub model: Option<ModelSpec>,
    pub seed: u64,
    pub chain: Chain,
    pub l: Option<usize>,
    pub eta: f64,
    pub mix_eps: Vec<f64>,
    pub certificates: Vec<String>,
    pub radii: Option<Vec<f64>>,
    pub directions: Option<usize>,
    pub scheme: SchemeName,
    pub driver: Driver,
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub pipeline: Option<String>,
    pub mu: f64,
    pub points: usize,
    pub measures: usize,
    pub functions: usize,
    pub tol_grad: f64,
    pub tol_max_se: Option<f64>,
    pub budget_pinnings: u64,
    pub budget_restarts: usize,
    pub budget_samples: usize,
    pub budget_mix_cap: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Outputs {
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

fn read_model(path: &Path) -> Result<ModelSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Parse(format!("cannot read model {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("model {}: {e}", path.display())))
}

fn non_empty<T>(v: Vec<T>) -> Option<Vec<T>> {
    if v.is_empty() { None } else { Some(v) }
}

/// Merges the config file (if any) with flags and fills defaults.
pub fn resolve(command: &str, flags: Flags) -> Result<(Settings, Outputs), Failure> {
    let (file, base) = match &flags.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Parse(format!("cannot read config {}: {e}", p.display())))?;
            let cfg: RunConfig =
                serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("config {}: {e}", p.display())))?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    let model = match (flags.model, file.model) {
        (Some(p), _) => Some(read_model(&p)?),
        (None, Some(ModelRef::Path(p))) => Some(read_model(&base.join(p))?),
        (None, Some(ModelRef::Inline(m))) => Some(m),
        (None, None) => None,
    };
    let seed = flags
        .seed
        .or(file.seed)
        .ok_or_else(|| Failure::Parse(format!("`{command}` is stochastic and needs --seed")))?;
    let s = Settings {
        command: command.to_string(),
        model,
        seed,
        chain: flags.chain.or(file.chain).unwrap_or(Chain::Glauber),
        l: flags.l.or(file.l),
        eta: flags.eta.or(file.eta).unwrap_or(1.0),
        mix_eps: non_empty(flags.mix_eps).or(file.mix_eps).unwrap_or_else(|| vec![0.25, 0.1, 0.01]),
        certificates: non_empty(flags.certificates).or(file.certificates).unwrap_or_default(),
        radii: non_empty(flags.radii).or(file.radii),
        directions: flags.directions.or(file.directions),
        scheme: flags.scheme.or(file.scheme).unwrap_or(SchemeName::Coordinate),
        driver: flags.driver.or(file.driver).unwrap_or(Driver::Identity),
        paths: flags.paths.or(file.paths),
        horizon: flags.horizon.or(file.horizon),
        dt: flags.dt.or(file.dt),
        pipeline: flags.pipeline.or(file.pipeline),
        mu: flags.mu.or(file.mu).unwrap_or(1.0),
        points: flags.points.or(file.points).unwrap_or(256),
        measures: flags.measures.or(file.measures).unwrap_or(20),
        functions: flags.functions.or(file.functions).unwrap_or(5),
        tol_grad: flags.tol_grad.or(file.tol.grad).unwrap_or(1e-10),
        tol_max_se: flags.tol_max_se.or(file.tol.max_se),
        budget_pinnings: flags
            .budget_pinnings
            .or(file.budget.pinnings)
            .unwrap_or(locmix::stability::DEFAULT_PIN_BUDGET as u64),
        budget_restarts: flags.budget_restarts.or(file.budget.restarts).unwrap_or(30),
        budget_samples: flags.budget_samples.or(file.budget.samples).unwrap_or(2000),
        budget_mix_cap: flags.budget_mix_cap.or(file.budget.mix_cap).unwrap_or(locmix::spectra::DEFAULT_MIX_CAP),
    };
    validate(&s)?;
    let outputs = Outputs {
        out: flags.out.or(file.out),
        csv: flags.csv.or(file.csv),
        trace: flags.trace.or(file.trace),
    };
    Ok((s, outputs))
}

fn validate(s: &Settings) -> Result<(), Failure> {
    let bad = |m: String| Err(Failure::Parse(m));
    if !(s.tol_grad >= f64::EPSILON) {
        return bad(format!("tol.grad = {} is below machine precision", s.tol_grad));
    }
    if let Some(se) = s.tol_max_se {
        if !(se >= f64::EPSILON) {
            return bad(format!("tol.max-se = {se} is below machine precision"));
        }
    }
    if let Some(e) = s.mix_eps.iter().find(|e| !(**e > 0.0 && **e < 0.5)) {
        return bad(format!("mix-eps {e} is outside (0, 1/2)"));
    }
    if !(s.eta > 0.0) || !(s.mu > 0.0) {
        return bad("eta and mu must be positive".into());
    }
    if s.paths.is_some_and(|p| p < 2) {
        return bad("need at least two paths".into());
    }
    Ok(())
}
