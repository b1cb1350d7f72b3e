//! JSON report structures shared by the verification harness and the CLI.
//!
//! Field names are stable; numbers use serde_json's shortest round-trip
//! float encoding, which is lossless for f64, so identical runs produce
//! byte-identical files and reports can be diffed in CI.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reproducibility block: the seed and the finite-difference step sizes
/// the residuals were computed with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub points: usize,
    /// Fixed outer step of the monopole-data engine.
    pub gh_outer_step: f64,
    /// Fixed outer step of the reduction engine.
    pub reduction_outer_step: f64,
    pub version: String,
}

/// Result of one verification check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    /// The identity or property the residual measures.
    pub anchor: String,
    pub points: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Chart coordinates (followed by fiber components where relevant) of
    /// the worst sampled point.
    pub worst_point: Vec<f64>,
    /// Reason the check could not be run; a skipped check counts as
    /// passed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

impl CheckRecord {
    pub fn skipped(check: &str, anchor: &str, reason: &str) -> Self {
        CheckRecord {
            check: check.into(),
            anchor: anchor.into(),
            points: 0,
            max_residual: 0.0,
            tolerance: 0.0,
            pass: true,
            worst_point: vec![],
            skipped: Some(reason.into()),
        }
    }
}

/// Full verification report for one model run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model: String,
    pub environment: Environment,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
}

impl Report {
    pub fn new(model: &str, environment: Environment, checks: Vec<CheckRecord>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Report { model: model.into(), environment, checks, pass }
    }

    pub fn to_json(&self) -> String {
        // Struct field order is fixed, so this is deterministic.
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Report> {
        serde_json::from_str(s).map_err(|e| Error::Parse(format!("report JSON: {e}")))
    }
}

/// Pointwise metric evaluation emitted by the CLI: the base metric
/// combination s*g over the (chart, psi) basis, the connection quadruple
/// omega_0..omega_3, and the scalar data it was assembled from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QkOutput {
    pub model: String,
    pub chart: Vec<f64>,
    pub v: f64,
    pub u: Vec<Vec<f64>>,
    /// s*g as a dense symmetric matrix over (chart, psi_0..psi_n).
    pub metric: Vec<Vec<f64>>,
    /// Covector rows omega_0..omega_3 over the same basis.
    pub omega: Vec<Vec<f64>>,
}

impl QkOutput {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("output serialization cannot fail")
    }
}
