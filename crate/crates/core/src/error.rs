use std::path::PathBuf;

use crate::plate::IsometryReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-coercive material: mu = {mu} must be positive (lambda = {lambda} must be >= 0)")]
    NonCoercive { mu: f64, lambda: f64 },

    #[error("degenerate form: reduced system is singular")]
    DegenerateForm,

    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),

    #[error("operator not symmetric: probe defect {defect:e}")]
    NotSymmetric { defect: f64 },

    #[error("solver did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        /// Best iterate reached before giving up.
        best: Box<Vec<f64>>,
    },

    #[error("unknown gradient rule `{0}`")]
    UnknownRule(String),

    #[error("surface is not isometric: max metric violation {:e} at ({}, {})", .0.max_violation, .0.worst_point[0], .0.worst_point[1])]
    NotIsometric(IsometryReport),

    #[error("point ({0}, {1}) lies outside the surface domain")]
    OutsideDomain(f64, f64),

    #[error("derivative evaluation failed at ({0}, {1})")]
    Derivative(f64, f64),

    #[error("resolution cap: {needed} quadrature points requested, cap is {cap}")]
    ResolutionCap { needed: u64, cap: u64 },

    #[error("missing corrector data: {0}")]
    MissingCorrector(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
