use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid setup: {0}")]
    InvalidSetup(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear system is numerically singular ({context})")]
    SingularSystem { context: &'static str },

    #[error("policy-induced chain is not ergodic")]
    NonErgodicChain,

    #[error("empty trajectory batch")]
    EmptyBatch,

    #[error("old policy has zero probability for action {action} in state {state}")]
    UnsupportedAction { state: usize, action: usize },

    #[error("degenerate gradient: g'W^+g = {0:e}")]
    DegenerateGradient(f64),

    #[error("unstable gains (spectral radius {spectral_radius:.6}){}", iterate.map(|i| format!(" at iterate {i}")).unwrap_or_default())]
    UnstableGains {
        spectral_radius: f64,
        iterate: Option<usize>,
    },

    #[error("state covariance is singular")]
    SingularCovariance,

    #[error("problem too large to enumerate: {0} deterministic policies")]
    TooLarge(u128),

    #[error("non-finite value {value} at coordinate {index}")]
    NonFiniteValue { index: usize, value: f64 },

    #[error(transparent)]
    Json(#[from] JsonError),
}

/// Wrapper so `Error` can stay `Clone + PartialEq`.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct JsonError(pub String);

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(JsonError(e.to_string()))
    }
}
