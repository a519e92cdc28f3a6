//! `locmix` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 parse or usage error, 3 budget or
//! regime error, 4 failed check or numerical assertion.

// `!(x > 0.0)` is how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use locmix::report::{config_hash, first_failure};
use locmix::{Envelope, Error};
use serde_json::json;

use config::{resolve, Flags};

#[derive(Parser)]
#[command(name = "locmix", version, about = "Mixing-bound analyses for small spin systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral gap, entropy-ratio estimate and mixing times of one chain.
    Analyze(Flags),
    /// Stability and marginal certificates.
    Certify(Flags),
    /// Localization paths with a martingale summary.
    Simulate(Flags),
    /// An assembled mixing bound with its ingredient checks.
    Pipeline(Flags),
    /// The identity and lemma suite on seeded random instances.
    Verify(Flags),
}

#[derive(Debug)]
pub enum Failure {
    Io(String),
    Parse(String),
    Budget(String),
    Assertion(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Parse(_) => 2,
            Failure::Budget(_) => 3,
            Failure::Assertion(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Parse(m) | Failure::Budget(m) | Failure::Assertion(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::BudgetExceeded { .. }
            | Error::DimensionTooLarge { .. }
            | Error::NotUnique
            | Error::MaxIterations(_)
            | Error::Nonconvergence(_)
            | Error::InsufficientSamples { .. } => Failure::Budget(m),
            Error::Malformed(_)
            | Error::InvalidGraph(_)
            | Error::NonFinite(_)
            | Error::AllZeroMass
            | Error::PreconditionViolated(_)
            | Error::NotFerromagnetic(..)
            | Error::SubsetTooLarge { .. }
            | Error::NotStronglyConvex(_)
            | Error::TailMass(_)
            | Error::DegreeTooSmall(_) => Failure::Parse(m),
            _ => Failure::Assertion(m),
        }
    }
}

fn threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("LOCMIX_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Parse(format!("LOCMIX_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Io(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    threads()?;
    let (name, flags) = match cli.command {
        Command::Analyze(f) => ("analyze", f),
        Command::Certify(f) => ("certify", f),
        Command::Simulate(f) => ("simulate", f),
        Command::Pipeline(f) => ("pipeline", f),
        Command::Verify(f) => ("verify", f),
    };
    let (settings, outputs) = resolve(name, flags)?;
    let outcome = match name {
        "analyze" => commands::analyze(&settings, &outputs)?,
        "certify" => commands::certify(&settings)?,
        "simulate" => commands::simulate(&settings, &outputs)?,
        "pipeline" => commands::pipeline(&settings, &outputs)?,
        _ => commands::verify(&settings)?,
    };
    let hash = config_hash(&settings);
    let env = Envelope::new(settings.seed, hash, json!({ "settings": settings, "report": outcome.body }));
    let mut text = serde_json::to_string_pretty(&env).expect("report serializes");
    text.push('\n');
    match &outputs.out {
        Some(p) => std::fs::write(p, &text).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    if let Some(f) = first_failure(&outcome.checks) {
        return Err(Failure::Assertion(format!(
            "check {} failed on {}: lhs {:e}, rhs {:e}, tolerance {:e}",
            f.check, f.instance, f.lhs, f.rhs, f.tolerance
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("locmix: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
