//! Machine-readable check records and report envelopes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Le,
    Eq,
    Info,
}

/// One comparison `lhs <= rhs` (or `|lhs - rhs| <= tolerance` for identities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub relation: Relation,
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRecord {
    /// Records `lhs <= rhs + tolerance`.
    pub fn le(check: &str, instance: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            relation: Relation::Le,
            instance: instance.into(),
            lhs,
            rhs,
            tolerance,
            pass: lhs <= rhs + tolerance,
        }
    }

    /// Records `|lhs - rhs| <= tolerance`.
    pub fn eq(check: &str, instance: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            relation: Relation::Eq,
            instance: instance.into(),
            lhs,
            rhs,
            tolerance,
            pass: (lhs - rhs).abs() <= tolerance,
        }
    }

    /// Records a value that is reported but never asserted.
    pub fn info(check: &str, instance: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            check: check.into(),
            relation: Relation::Info,
            instance: instance.into(),
            lhs,
            rhs,
            tolerance: f64::INFINITY,
            pass: true,
        }
    }
}

impl CheckRecord {
    /// Distance to failure; negative when the record fails.
    pub fn margin(&self) -> f64 {
        match self.relation {
            Relation::Le => self.rhs + self.tolerance - self.lhs,
            Relation::Eq => self.tolerance - (self.lhs - self.rhs).abs(),
            Relation::Info => f64::INFINITY,
        }
    }
}

pub fn all_pass(records: &[CheckRecord]) -> bool {
    records.iter().all(|r| r.pass)
}

/// First failing record, if any.
pub fn first_failure(records: &[CheckRecord]) -> Option<&CheckRecord> {
    records.iter().find(|r| !r.pass)
}

/// The record with the least margin; failing records therefore come first.
/// Ties keep the earliest record.
pub fn tightest(records: Vec<CheckRecord>) -> Option<CheckRecord> {
    records.into_iter().fold(None, |best: Option<CheckRecord>, r| match best {
        Some(b) if b.margin() <= r.margin() => Some(b),
        _ => Some(r),
    })
}

/// Tightest record per check name, in order of first appearance, each with
/// its instance suffixed by how many records it stands for.
pub fn summarize(records: Vec<CheckRecord>) -> Vec<CheckRecord> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<CheckRecord>> = std::collections::HashMap::new();
    for r in records {
        if !groups.contains_key(&r.check) {
            order.push(r.check.clone());
        }
        groups.entry(r.check.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|name| {
            let g = groups.remove(&name).expect("group");
            let count = g.len();
            let mut t = tightest(g).expect("non-empty group");
            t.instance = format!("{} (worst of {count})", t.instance);
            t
        })
        .collect()
}

/// Report envelope written by the command-line driver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub body: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(seed: u64, config_hash: String, body: T) -> Self {
        Self { version: VERSION.to_string(), seed, config_hash, body }
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(bytes))
}
