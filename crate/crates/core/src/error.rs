use thiserror::Error;

use crate::lcp::LcpStatus;

/// Errors shared across the solver modules.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{0}")]
    InvalidData(String),

    #[error("game is not an exact potential game ({violations} violated conditions, worst deviation {worst:.3e})")]
    NotPotential { violations: usize, worst: f64 },

    #[error("{what} not positive definite at {place}")]
    NotPositiveDefinite { what: String, place: String },

    #[error("Gamma factor singular at stage {stage} (rcond estimate {rcond:.3e})")]
    SingularGamma { stage: usize, rcond: f64 },

    #[error("stage index {k} out of range (max {max})")]
    StageOutOfRange { k: usize, max: usize },

    #[error("player index {i} out of range ({players} players)")]
    PlayerOutOfRange { i: usize, players: usize },

    #[error("LCP solve failed with status {status:?}{}", diagnostic.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    LcpFailed {
        status: LcpStatus,
        diagnostic: Option<String>,
    },

    #[error("enumeration supports at most {cap} complementarity variables, problem has {d}")]
    EnumerationTooLarge { d: usize, cap: usize },

    #[error("evaluator returned a non-finite value in {0}")]
    NonFinite(String),

    #[error("sufficiency recursion incomplete: T singular at stage {stage}")]
    SufficiencyIncomplete { stage: usize },
}
