//! Shared error type for the library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model family `{0}`")]
    UnknownFamily(String),

    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),

    #[error("coefficient table has {len} entries but row n = {n} needs {needed}")]
    CoefficientTableTooShort { n: u64, len: usize, needed: usize },

    #[error("row index {0} is not on the configured n-grid")]
    RowOutsideGrid(u64),

    #[error("zero total variance in row n = {0}")]
    ZeroTotalVariance(u64),

    #[error("threshold must be nonnegative, got {0}")]
    NegativeThreshold(f64),

    #[error(
        "speed a_n = {a} at n = {n} must lie in (0, 1) for the truncation bands to be ordered"
    )]
    DegenerateBands { n: u64, a: f64 },

    #[error("speed sequence invalid: {0}")]
    InvalidSpeed(String),

    #[error("state space of size {0} exceeds the exhaustive enumeration limit {1}")]
    StateSpaceTooLarge(usize, usize),

    #[error("invalid markov chain: {0}")]
    InvalidChain(String),

    #[error("block plan infeasible at n = {n}: {reason}")]
    BlockPlanInfeasible { n: u64, reason: String },

    #[error("series of length {got} does not cover the {needed} indices of the block scheme")]
    SeriesTooShort { got: usize, needed: usize },

    #[error("log-mgf unavailable: {0}")]
    MgfUnavailable(String),

    #[error("tilt target {target} is unattainable inside the mgf domain ({lo}, {hi})")]
    TargetUnattainable { target: f64, lo: f64, hi: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported event for this operation: {0}")]
    UnsupportedEvent(String),

    #[error("exact entry law unavailable for this family: {0}")]
    ExactLawUnavailable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
