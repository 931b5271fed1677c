use std::path::PathBuf;

use crate::logits::Token;

/// Errors produced by the library.
///
/// `Backend` and `Protocol` are the only variants expected during a healthy
/// run against a flaky remote endpoint; everything else indicates bad inputs
/// or configuration.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// The two logit vectors do not cover the same token set. Usually means
    /// the caller skipped `merge_topk` before extrapolating.
    #[error("token sets differ: {left} vs {right} tokens (first only on one side: {example:?}); top-k vectors must go through merge_topk first")]
    TokenSetMismatch {
        left: usize,
        right: usize,
        example: Token,
    },

    /// A token has probability zero in exactly one distribution where the
    /// requested exponent makes the result undefined or infinite.
    #[error("degenerate support at token {token:?}: zero probability on one side is incompatible with the requested exponent")]
    DegenerateSupport { token: Token },

    #[error("invalid parameter {name}: {message}")]
    InvalidParameter {
        name: &'static str,
        message: String,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("empty {0}")]
    EmptyInput(&'static str),

    /// The split rule matched the prompt a number of times other than one.
    #[error("split rule {rule:?} matched {matches} times (expected exactly 1)")]
    SplitAmbiguity { rule: String, matches: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Remote backend gave up after exhausting its retry budget.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// The endpoint answered, but not with the wire format we speak. The raw
    /// payload is kept for diagnosis.
    #[error("protocol error: {message}; payload: {payload}")]
    Protocol { message: String, payload: String },

    #[error("instance {id}: {source}")]
    Instance {
        id: String,
        #[source]
        source: Box<CoreError>,
    },

    /// Failure during generation, tagged with the sampling step it occurred at.
    #[error("generation step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<CoreError>,
    },

    #[error("run canceled")]
    Canceled,
}

impl CoreError {
    pub fn invalid_parameter(name: &'static str, message: impl Into<String>) -> Self {
        CoreError::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn for_instance(id: impl Into<String>) -> impl FnOnce(CoreError) -> CoreError {
        let id = id.into();
        move |source| CoreError::Instance {
            id,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
