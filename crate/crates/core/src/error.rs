use std::path::PathBuf;

use thiserror::Error;

use crate::model::MultimodalModel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (shape, range, ordering).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Prototype alignment was requested before every class prototype had
    /// been observed at least once. Callers skip the alignment term.
    #[error("alignment deferred: prototype for class {class} not yet initialized")]
    AlignmentDeferred { class: usize },

    /// All unnormalized fusion scores are zero, so the normalized weights are
    /// undefined.
    #[error("degenerate fusion evidence: scores sum to zero")]
    DegenerateEvidence,

    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },

    #[error("non-finite loss {loss} while pretraining modality {modality} (epoch {epoch}, batch {batch})")]
    PretrainDiverged {
        modality: usize,
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    /// Multimodal training produced a non-finite loss. Carries the parameters
    /// from the last step that completed with finite values.
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        last_good: Box<MultimodalModel>,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
