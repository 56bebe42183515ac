use std::path::PathBuf;

use crate::data::SubjectId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no training subjects")]
    NoTrainingSubjects,

    #[error("degenerate labels: both classes need positive total weight")]
    DegenerateLabels,

    #[error("class {class} has only {count} trials, need at least {k}")]
    TooFewTrials { class: u8, count: usize, k: usize },

    #[error("subject {subject}: {inner}")]
    Subject { subject: SubjectId, inner: Box<Error> },

    #[error("unknown subject {0}")]
    UnknownSubject(SubjectId),

    #[error("SG+CS requires unlabeled target trials")]
    MissingTarget,

    #[error("need at least one permutation")]
    NoPermutations,

    #[error("singular covariance (condition estimate {condition:.3e})")]
    SingularCovariance { condition: f64 },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn for_subject(self, subject: SubjectId) -> Self {
        Error::Subject {
            subject,
            inner: Box::new(self),
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
