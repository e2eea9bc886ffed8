use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The represented function vanishes on the quadrature, so the
    /// constraint potential `<u, Phi> / ||u||` is undefined.
    #[error("degenerate measure: ||u|| = 0 on the quadrature set")]
    DegenerateMeasure,

    #[error("degenerate constraint gradient: sum of |grad C|^2 over particles is {0:e}")]
    DegenerateConstraintGradient(f64),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
