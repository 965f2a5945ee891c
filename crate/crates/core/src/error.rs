use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Which coordinate direction a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => f.write_str("x"),
            Axis::Y => f.write_str("y"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knot configuration: {0}")]
    InvalidKnots(String),

    #[error("point {value} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { value: f64, lo: f64, hi: f64 },

    #[error("derivative order {order} not allowed for degree {degree}")]
    DerivativeOrder { order: usize, degree: usize },

    #[error(
        "smoothing condition violated: {observations} observations but the spline space has dimension {dimension}"
    )]
    SmoothingCondition {
        observations: usize,
        dimension: usize,
    },

    #[error("system matrix is rank deficient along the {axis} axis: {detail}")]
    RankDeficient { axis: Axis, detail: String },

    #[error("linear system could not be factorized: {0}")]
    Singular(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-positive value {value} at ({row}, {col})")]
    NonPositive { value: f64, row: usize, col: usize },

    #[error("grids are defined on different meshes")]
    MeshMismatch,

    #[error("envelope violated: f({x}, {y}) = {value} exceeds M = {bound}")]
    EnvelopeViolation {
        x: f64,
        y: f64,
        value: f64,
        bound: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("every smoothing parameter in the grid failed to produce a fit")]
    AllFitsFailed,

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
