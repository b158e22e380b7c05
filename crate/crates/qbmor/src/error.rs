//! Error type shared across the crate.

use num_complex::Complex64;
use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by system assembly, factorization, reduction, simulation,
/// and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The shifted pencil s*E - A has no LU factorization (structurally or
    /// numerically singular at this shift).
    #[error("singular pencil at shift {shift}: {detail}")]
    SingularPencil { shift: Complex64, detail: String },

    /// A matrix outside the pencil family is singular (for example a
    /// projected mass matrix).
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A direct solve failed its residual check even after refinement.
    #[error("solve residual {residual:.3e} exceeds tolerance {tol:.3e} at shift {shift}")]
    ResidualCheck {
        shift: Complex64,
        residual: f64,
        tol: f64,
    },

    /// Orthonormalization removed every candidate column.
    #[error("rank collapse: {0}")]
    RankCollapse(String),

    /// Newton iteration in an implicit time step did not converge.
    #[error("Newton iteration failed at t={t}: residual {residual:.3e} after {iters} iterations")]
    NewtonFailure { t: f64, residual: f64, iters: usize },

    /// An evaluation request is outside the supported range.
    #[error("unsupported request: {0}")]
    Unsupported(String),

    /// Invalid configuration or argument value.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Filesystem failure wrapping the offending path.
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A structured text file (matrix, tensor, manifest) failed to parse.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// JSON serialization or deserialization failure.
    #[error("JSON error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the path being accessed.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
