use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("invalid span: {0}")]
    InvalidSpan(String),
    #[error("no admissible span position")]
    NoSpan,
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("state error: {0}")]
    State(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("validation error in dialogue {dialogue:?}, turn {turn}: {message}")]
    Validation {
        dialogue: String,
        turn: usize,
        message: String,
    },
    #[error("undefined value: {0}")]
    UndefinedValue(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad user input (files, schemas, configs) rather than
    /// failures while running. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Corpus(_)
                | Error::Configuration(_)
                | Error::Schema(_)
                | Error::Validation { .. }
                | Error::Parse(_)
                | Error::Checkpoint(_)
                | Error::Alignment(_)
        )
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Numeric(_) => "numeric",
            Error::Index(_) => "index",
            Error::Corpus(_) => "corpus",
            Error::Capacity(_) => "capacity",
            Error::InvalidSpan(_) => "invalid_span",
            Error::NoSpan => "no_span",
            Error::Vocab(_) => "vocab",
            Error::State(_) => "state",
            Error::Configuration(_) => "configuration",
            Error::Schema(_) => "schema",
            Error::Alignment(_) => "alignment",
            Error::Validation { .. } => "validation",
            Error::UndefinedValue(_) => "undefined_value",
            Error::Checkpoint(_) => "checkpoint",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}
