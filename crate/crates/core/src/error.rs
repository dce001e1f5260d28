use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation and reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// `mn > kB` must hold for every patch so the structured system can have
    /// full column rank.
    #[error("patch constraint violated: m*n = {area} must exceed k*B = {unknowns} (we should obey mn > kB)")]
    PatchConstraint { area: usize, unknowns: usize },

    #[error("rank deficient least-squares system: numerical rank {rank} < {cols} columns (first deficient column {column})")]
    RankDeficient { rank: usize, cols: usize, column: usize },

    #[error("measurement has numerical rank 0")]
    ZeroRank,

    #[error("patch at origin ({row}, {col}) failed: {source}")]
    Patch {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pixel ({row}, {col}) is not covered by any patch")]
    Uncovered { row: usize, col: usize },

    #[error("{0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures of the numerical kernels (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient { .. } | Error::ZeroRank => true,
            Error::Patch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
