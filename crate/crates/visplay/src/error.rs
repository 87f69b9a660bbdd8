use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum VisplayError {
    /// The string is not `<question>body</question>` with nothing around it.
    #[error("format error: {0}")]
    Format(String),

    /// Tags are correct but the body does not conform to the question grammar.
    #[error("grammar error: {0}")]
    Grammar(String),

    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),

    #[error("empty answer set for majority vote")]
    EmptyAnswers,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite logits at step {step}")]
    NonFiniteLogits { step: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    ConfigValidation(Vec<String>),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("transcript parse error at line {line}: {message}")]
    TranscriptParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VisplayError>;
