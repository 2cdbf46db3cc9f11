use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quadrature self-check failed: max |E[h_i h_j] - delta_ij| = {max_err:e} (tolerance {tol:e})")]
    QuadratureCheck { max_err: f64, tol: f64 },

    #[error("no nonzero Hermite coefficient at or above K={k} (tolerance {tol:e}); activation behaves like a low-degree polynomial")]
    NoCoefficientAboveK { k: usize, tol: f64 },

    #[error("series outside its convergence domain: |1 - r^2| = {0} >= 1/2")]
    OutsideConvergence(f64),

    #[error("kernel correlation argument {0} exceeds 1 in magnitude")]
    CorrelationOutOfRange(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("expanded polynomial would have {terms} terms, above the cap of {cap}")]
    TermCap { terms: usize, cap: usize },

    #[error("truth table entry {0} is not +1 or -1")]
    NonSignEntry(f64),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("hierarchy has no witness for label {0}")]
    MissingWitness(usize),

    #[error("ill-conditioned solve: {0}")]
    IllConditioned(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("version mismatch: file has format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable name, used by the CLI error record and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::QuadratureCheck { .. } => "quadrature_check",
            Error::NoCoefficientAboveK { .. } => "no_coefficient_above_k",
            Error::OutsideConvergence(_) => "outside_convergence",
            Error::CorrelationOutOfRange(_) => "correlation_out_of_range",
            Error::Numerical(_) => "numerical",
            Error::TermCap { .. } => "term_cap",
            Error::NonSignEntry(_) => "non_sign_entry",
            Error::Infeasible(_) => "infeasible",
            Error::Domain(_) => "domain",
            Error::MissingWitness(_) => "missing_witness",
            Error::IllConditioned(_) => "ill_conditioned",
            Error::Config(_) => "config",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Corrupt { .. } => "corrupt",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
