use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid mesh in cell {cell}: {reason}")]
    InvalidCell { cell: usize, reason: String },

    #[error("failed to read mesh file {path}: {source}")]
    MeshIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse mesh file {path} (line {line}, column {column}): {message}")]
    MeshParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("quadrature degree {requested} exceeds the maximum supported degree {max}")]
    QuadratureDegree { requested: usize, max: usize },

    #[error("singular Gram matrix on cell {cell}")]
    SingularGram { cell: usize },

    #[error("singular local system ({what}) on cell {cell}")]
    SingularLocalSystem { cell: usize, what: &'static str },

    #[error("unsupported polynomial degree k = {0} (expected 0, 1 or 2)")]
    UnsupportedDegree(usize),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("sparse factorisation failed: {0}")]
    LinearSolve(String),

    #[error("Newton solver did not converge: {reason} (after {} iterations, residual {:.3e})",
        .report.iterations, .report.final_residual())]
    NonConvergence {
        reason: String,
        report: Box<crate::system::SolveReport>,
    },

    #[error("invalid study configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
