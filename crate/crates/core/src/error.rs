use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("coefficient arity mismatch for {what}: expected {expected}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("topology mismatch: {0}")]
    Topology(String),

    #[error("pair index {index} out of range (keypoint slots 0..{limit})")]
    PairIndex { index: usize, limit: usize },

    #[error("ill-posed least-squares system: {0}")]
    IllPosed(String),

    #[error("degenerate rig: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
