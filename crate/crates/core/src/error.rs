use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max asymmetry {max_asymmetry:e})")]
    NotHermitian { max_asymmetry: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("unrecoverable state: trace after clipping is {trace:e}")]
    UnrecoverableState { trace: f64 },

    #[error("measurement operator has a single eigenvalue; no contraction")]
    NoContraction,

    #[error("certification impossible: actuation graph is disconnected")]
    CertificationImpossible,

    #[error("singular grounded Laplacian system (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("generator evaluated at the target state (1 - p_target = {gap:e})")]
    EvaluatedAtTarget { gap: f64 },

    #[error("fit domain error: {0}")]
    FitDomain(String),

    #[error("trajectory {index} aborted: {source}")]
    TrajectoryAborted {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("campaign failed: {aborted} of {total} trajectories aborted")]
    CampaignFailure { aborted: usize, total: usize },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
}
