use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("{what}: expected length {expected}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("row {row} is fully masked; softmax is undefined")]
    FullyMasked { row: usize },

    #[error("every target position is padding")]
    AllPad,

    #[error("empty target sequence")]
    EmptyTarget,

    #[error("answer token sequence is empty")]
    EmptyAnswer,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty sequence passed to {0}")]
    EmptySequence(&'static str),

    #[error("span {start}..={end} lies outside the context segment of length {context_len}")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        context_len: usize,
    },

    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("relevance kind mismatch: expected {expected}, found {found}")]
    RelevanceKind {
        expected: &'static str,
        found: &'static str,
    },

    #[error("input of length {len} exceeds the limit of {max}")]
    Overlength { len: usize, max: usize },

    #[error("answer ({answer_len} tokens) does not fit in a source of {max_len} tokens")]
    AnswerTooLong { answer_len: usize, max_len: usize },

    #[error("example {0} has no supporting facts")]
    NoSupportingFacts(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid span record for example {id}: {reason}")]
    SpanRecord { id: String, reason: String },

    #[error("ids do not align; missing from generated: {missing_generated:?}; missing from reference: {missing_reference:?}")]
    IdMismatch {
        missing_generated: Vec<String>,
        missing_reference: Vec<String>,
    },

    #[error("unknown example id {0}")]
    UnknownExample(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
