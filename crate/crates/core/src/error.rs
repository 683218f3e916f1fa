use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition of an operation was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no collision to remove")]
    NoCollision,

    #[error("divergent moment: {0}")]
    DivergentMoment(String),

    #[error("rejection sampling failed after {attempts} attempts: {what}")]
    RejectionFailure { what: String, attempts: u64 },

    #[error("runaway simulation: more than {0} events")]
    Runaway(u64),

    #[error("thinning envelope violated: rate {rate} exceeds envelope {envelope}")]
    EnvelopeViolation { rate: f64, envelope: f64 },

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    Solver { residual: f64, iterations: usize },

    #[error("time does not diverge: alpha = {0} must lie in (0, 11/52)")]
    TimeDoesNotDiverge(f64),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
