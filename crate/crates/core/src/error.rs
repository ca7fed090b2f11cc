use thiserror::Error;

/// Errors raised across the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("frequency axis `{0}` is empty or not strictly increasing")]
    BadAxis(&'static str),

    #[error("frequency bins {0} and {1} overlap")]
    OverlappingBins(usize, usize),

    #[error("frequency bin {0} lies outside the sampled spectral support")]
    BinOutsideSupport(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not a valid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("state is not normalized (norm² = {0})")]
    NotNormalized(f64),

    #[error("amplitude vanishes: {0}")]
    ZeroAmplitude(String),

    #[error("off-diagonal weight {0:.3e} exceeds tolerance; bins are not mirror-paired")]
    OffDiagonal(f64),

    #[error("quadrature did not converge (relative change {0:.3e})")]
    QuadratureNonConvergence(f64),

    #[error("measurement set is rank deficient (rank {rank} < {required})")]
    RankDeficient { rank: usize, required: usize },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },

    #[error("{failed} of {total} Monte-Carlo reconstructions failed")]
    MonteCarloFailures { failed: usize, total: usize },

    #[error("count table for setting pair {0:?} has zero total")]
    ZeroTotal((usize, usize)),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
