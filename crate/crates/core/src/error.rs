use thiserror::Error;

/// Errors raised by the planner, retriever, function base and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid agent id: {0}")]
    InvalidAgent(String),
    #[error("invalid board config: {0}")]
    InvalidConfig(String),
    #[error("function `{function}` expects {expected} but received {actual}")]
    VariantMismatch {
        function: String,
        expected: String,
        actual: String,
    },
    #[error("pursuer {0} has no candidate moves; emergency fallback must engage")]
    EmptyCandidates(usize),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("invalid function spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("function base is empty")]
    EmptyBase,
    #[error("top-k requires k >= 1")]
    ZeroK,
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty candidate list")]
    NoCandidates,
    #[error("selected `{0}` is not among the candidates")]
    SelectionOutsideCandidates(String),
    #[error("no candidate matches stage {0}")]
    NoStageMatch(String),
    #[error("unknown emergency trigger `{0}`")]
    UnknownTrigger(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("game already terminated: {0:?}")]
    Terminated(crate::grid::OutcomeKind),
    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("max_entropy requires n >= 1")]
    EmptySupport,
    #[error("invalid policy parameter: {0}")]
    InvalidPolicy(String),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("remote call failed: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
