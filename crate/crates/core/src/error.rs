//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document is empty after normalization")]
    EmptyDocument,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("no statistics for document `{0}` and no fallback table")]
    MissingStats(String),

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("non-finite value: {0}")]
    Numerical(String),

    #[error("empty input")]
    EmptyInput,

    #[error("rationale mask selects no tokens")]
    EmptyRationale,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("corrupt annotation `{annotation_id}` on document `{doc_id}`: {detail}")]
    CorruptAnnotation {
        annotation_id: String,
        doc_id: String,
        detail: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input (configs, flags, malformed
    /// files) as opposed to failures during execution. The CLI maps the
    /// former to exit code 1 and the latter to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::EmptyDocument
                | Error::InvalidConfig(_)
                | Error::InvalidCorpus(_)
                | Error::EmptyInput
                | Error::EmptyDataset(_)
                | Error::CorruptAnnotation { .. }
                | Error::InsufficientData(_)
                | Error::Json(_)
        )
    }
}
