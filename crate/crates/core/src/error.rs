use thiserror::Error;

use crate::gan::EntropicGanModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value produced at node {node} ({op})")]
    NumericOverflow { node: usize, op: &'static str },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sinkhorn did not converge within {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("brute-force oracle is capped at 64 entries, got {rows}x{cols}")]
    OracleSizeCap { rows: usize, cols: usize },

    #[error("training diverged at generator iteration {iteration}; last good checkpoint is iteration {}", .last_good.iterations)]
    Diverged {
        iteration: usize,
        last_good: Box<EntropicGanModel>,
    },

    #[error("all importance weights underflowed; increase the number of latent samples or lambda")]
    WeightUnderflow,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NumericOverflow { .. } => "numeric-overflow",
            Error::BackwardBeforeForward => "backward-before-forward",
            Error::NonScalarOutput(_) => "non-scalar-output",
            Error::NonFiniteGradient(_) => "non-finite-gradient",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::NotConverged { .. } => "not-converged",
            Error::OracleSizeCap { .. } => "oracle-size-cap",
            Error::Diverged { .. } => "diverged",
            Error::WeightUnderflow => "weight-underflow",
            Error::NotPositiveDefinite(_) => "not-positive-definite",
            Error::DegeneratePosterior(_) => "degenerate-posterior",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
