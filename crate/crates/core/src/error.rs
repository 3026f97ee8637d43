use thiserror::Error;

/// Errors surfaced by simulation, analysis and configuration code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario at `{field}`: {reason}")]
    InvalidScenario { field: String, reason: String },

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("payload of {0} bytes exceeds the 222-byte frame limit")]
    PayloadTooLarge(usize),

    #[error("payload must be at least 1 byte")]
    PayloadEmpty,

    #[error("RRM field out of range: {0}")]
    RrmFieldRange(String),

    #[error("RRM buffer truncated: need {need} bytes, got {got}")]
    RrmTruncated { need: usize, got: usize },

    #[error("queueing model saturated: load {lambda:.4} >= service {mu:.4} (per round)")]
    QueueSaturated { lambda: f64, mu: f64 },

    #[error("M/D/n stage saturated: lambda {lambda:.4} >= n {n}")]
    MdnSaturated { lambda: f64, n: usize },

    #[error("plant construction failed: {0}")]
    PlantModel(String),

    #[error("plant state diverged (non-finite) in subsystem {subsystem} at t={t:.3}s")]
    PlantDiverged { subsystem: usize, t: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stability analysis: {0}")]
    Stability(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
