use std::fmt;
use std::path::PathBuf;

/// Which side of an untrained/trained comparison an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Untrained,
    Trained,
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelRole::Untrained => f.write_str("untrained"),
            ModelRole::Trained => f.write_str("trained"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate input: {survivors} of {rows} rows survive centering, at least 2 are required")]
    DegenerateInput { rows: usize, survivors: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("eigenvalue sum {sum} deviates from 1 by more than 1e-6")]
    SpectrumDivergence { sum: f64 },

    #[error("matrix has no nonzero entry")]
    ZeroMatrix,

    #[error("log-prob sequence is empty")]
    EmptySequence,

    #[error("log-prob at position {index} is {value}, expected a finite value <= 0")]
    InvalidLogProb { index: usize, value: f64 },

    #[error("{role} model: {source}")]
    InModel {
        role: ModelRole,
        #[source]
        source: Box<Error>,
    },

    #[error("sentence sets differ: only in untrained {only_in_untrained:?}, only in trained {only_in_trained:?}")]
    SentenceSetMismatch {
        only_in_untrained: Vec<String>,
        only_in_trained: Vec<String>,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("schema violation at {pointer}: {message}")]
    SchemaViolation { pointer: String, message: String },

    #[error("duplicate sentence_id {0:?}")]
    DuplicateSentenceId(String),

    #[error("manifest for {model_id:?} carries no log-probs for sentence {sentence_id:?}")]
    MissingLogProbs { model_id: String, sentence_id: String },

    #[error("no sentence survived evaluation")]
    NoUsableSentences,

    #[error("non-finite value in report field {0}")]
    NonFiniteReport(String),

    #[error("{}: {source}", path.display())]
    AtPath {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at_path(path: impl Into<PathBuf>, source: Error) -> Self {
        match source {
            // io errors already carry their path
            e @ Error::Io { .. } => e,
            e => Error::AtPath {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_model(role: ModelRole, source: Error) -> Self {
        Error::InModel {
            role,
            source: Box::new(source),
        }
    }

    /// The innermost error, with path and model context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InModel { source, .. } | Error::AtPath { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for filesystem failures, as opposed to bad data or metric failures.
    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io { .. })
    }

    /// Failures that concern one sentence only and may be skipped during
    /// dataset aggregation.
    pub fn is_per_sentence(&self) -> bool {
        matches!(
            self.root(),
            Error::DegenerateInput { .. }
                | Error::NonFiniteInput { .. }
                | Error::InvalidShape(_)
                | Error::SpectrumDivergence { .. }
                | Error::EmptySequence
                | Error::InvalidLogProb { .. }
        )
    }
}
