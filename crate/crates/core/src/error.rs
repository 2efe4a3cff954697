use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown language code `{0}`")]
    UnknownLanguage(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("lexicon conflict: {0}")]
    LexiconConflict(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid model configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("position {position} out of range for sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("unknown token id {0}")]
    UnknownTokenId(usize),

    #[error("PEFT state already applied ({0})")]
    PeftAlreadyApplied(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("missing self-debias template for ({language}, {attribute})")]
    MissingTemplate { language: String, attribute: String },

    #[error("not a probability distribution: {0}")]
    NotADistribution(String),

    #[error("pair {pair_id}: {message}")]
    Pair { pair_id: String, message: String },

    #[error("report cell missing: {0}")]
    MissingCell(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("response id mismatch: sent `{sent}`, received `{received}`")]
    IdMismatch { sent: String, received: String },

    #[error("protocol version mismatch: expected {expected}, bridge speaks {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("bridge did not answer within {0:?}")]
    Timeout(std::time::Duration),

    #[error("backend failure at position {position}: {source}")]
    AtPosition {
        position: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed ({artifact}): {source}")]
    Stage {
        stage: &'static str,
        artifact: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_position(position: usize, source: Error) -> Self {
        Error::AtPosition {
            position,
            source: Box::new(source),
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::UnknownLanguage(_)
            | Error::UnknownAttribute(_)
            | Error::LexiconConflict(_)
            | Error::Invalid(_)
            | Error::Empty(_)
            | Error::Config(_)
            | Error::MissingTemplate { .. }
            | Error::MissingCell(_)
            | Error::Pair { .. } => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Stage { source, .. } | Error::AtPosition { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
