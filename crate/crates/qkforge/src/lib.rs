//! Construction and numerical verification of toric quaternionic Kähler
//! metrics obtained from degree-two prepotentials through a generalized
//! Legendre transform and a quaternionic quotient of the associated
//! hyperkähler cone.
//!
//! The pipeline runs in three stages:
//!
//! 1. `twistor` builds the generating function F of a toric hyperkähler
//!    cone from O(2) section moduli and a prepotential (or the logarithmic
//!    toy model), and checks its defining properties (reality,
//!    polyharmonicity, rotation/scaling covariance).
//! 2. `gh` assembles the monopole data (Higgs matrix Φ, connection forms
//!    A_K, hyperkähler potential K, metric G and 2-forms Ω) from F and
//!    verifies the abelian monopole equations.
//! 3. `reduction` quotients the cone by the quaternionic scaling/rotation
//!    action: it extracts the base data (V, U, B, C) on a gauge-fixed
//!    chart and emits the quaternionic Kähler metric s·g and Sp(1)
//!    connection, cross-checked by reassembling the cone metric.
//!
//! `vfunc` re-derives U and B from the single function V and evaluates the
//! second-order constraints V must satisfy, including the four-dimensional
//! (n = 1) closed forms of Calderbank-Pedersen type. `models` carries the
//! worked examples with their closed-form expected values as regression
//! fixtures, and `verify` orchestrates everything into JSON reports for
//! the CLI.

pub mod deriv;
pub mod expr;
pub mod gh;
pub mod models;
pub mod quaternion;
pub mod reduction;
pub mod report;
pub mod twistor;
pub mod verify;
pub mod vfunc;

use thiserror::Error;

/// Crate-wide error type; variants mirror the domain failures of the
/// individual stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero quaternion has no inverse/rotation action")]
    ZeroQuaternion,
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("gimbal-locked orientation: |cos theta| = {0:.3e} below threshold")]
    GimbalLock(f64),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("stencil touches singular locus at {point:?}")]
    SingularStencil { point: Vec<f64> },
    #[error("singular configuration: {0}")]
    SingularConfiguration(String),
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),
    #[error("model inconsistency: {0}")]
    ModelInconsistency(String),
    #[error("gauge representative failure: {0}")]
    GaugeRepresentative(String),
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Totally antisymmetric symbol on three indices in {0, 1, 2}.
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}
