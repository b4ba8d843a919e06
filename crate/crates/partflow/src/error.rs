use crate::ascent::TraceRecord;
use crate::model::Violation;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The scenario failed structural validation; every violation is listed.
    #[error("scenario validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    /// Bad configuration (missing positions, negative edge weights, zero samples, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A demand point has no endpoint with a finite assignment cost.
    #[error("point {point} has no reachable endpoint (all assignment costs forbidden)")]
    InfeasiblePoint { point: usize },

    /// A NaN or infinity showed up where finite arithmetic was expected.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// The dual iterates blew past the divergence guard.
    #[error("dual ascent diverged at iteration {iteration} (|psi| exceeded guard)")]
    Divergence {
        iteration: usize,
        trace: Vec<TraceRecord>,
    },

    /// The brute-force oracle guard was exceeded.
    #[error("oracle instance too large: {detail}")]
    InstanceTooLarge { detail: String },

    /// The oracle enumerated every assignment and found no feasible flow completion.
    #[error("oracle found no feasible assignment/flow pair")]
    OracleInfeasible,

    /// A message violated the synchronous transport contract.
    #[error("transport fault: {0}")]
    TransportFault(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
