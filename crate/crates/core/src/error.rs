use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mdp: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("insufficient budget: charge of {cost} exceeds remaining {remaining}")]
    InsufficientBudget { cost: f64, remaining: f64 },

    #[error("budget exhausted (remaining {remaining})")]
    BudgetExhausted { remaining: f64 },

    #[error("invalid fidelity family: {0}")]
    InvalidFamily(String),

    #[error("offline dataset size {n} is not a multiple of the episode length {episode_len}")]
    IndivisibleDatasetSize { n: usize, episode_len: usize },

    #[error("support mismatch at (s={s}, a={a}, s'={s_next})")]
    SupportMismatch { s: usize, a: usize, s_next: usize },

    #[error("weights are not normalized (sum = {0})")]
    OmegaNotNormalized(f64),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("visited set is empty")]
    EmptyVisitedSet,

    #[error("history buffer for fidelity {0} is empty")]
    EmptyBuffer(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("audit failure: {0}")]
    AuditFailure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
