use std::path::PathBuf;

use crate::data::ModalityId;

#[derive(Debug, thiserror::Error)]
pub enum DmfpError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("unknown label `{0}` (expected `private` or `public`)")]
    UnknownLabel(String),

    #[error("record `{id}` is missing the {modality} block")]
    MissingBlock { id: String, modality: ModalityId },

    #[error("record `{0}` has no gold label")]
    Unlabeled(String),

    #[error("record `{0}` not found")]
    UnknownRecord(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training data contains a single class ({0}); both private and public examples are required")]
    SingleClass(String),

    #[error("fold {fold} of {folds} contains a single class; use stratified folds or provide at least {folds} examples per class")]
    DegenerateFold { fold: usize, folds: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("no neighbors available: {0}")]
    NoNeighbors(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("every cluster is single-class; lower the cluster count")]
    DegenerateClusters,
}

pub type Result<T> = std::result::Result<T, DmfpError>;

impl DmfpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DmfpError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(what: impl Into<String>, message: impl ToString) -> Self {
        DmfpError::Parse {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Short machine-readable kind, used for error JSON emitted by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            DmfpError::Io { .. } => "io",
            DmfpError::Parse { .. } => "parse",
            DmfpError::DimensionMismatch(_) => "dimension_mismatch",
            DmfpError::DuplicateId(_) => "duplicate_id",
            DmfpError::NonFinite(_) => "non_finite",
            DmfpError::UnknownLabel(_) => "unknown_label",
            DmfpError::MissingBlock { .. } => "missing_block",
            DmfpError::Unlabeled(_) => "unlabeled",
            DmfpError::UnknownRecord(_) => "unknown_record",
            DmfpError::InvalidSplit(_) => "invalid_split",
            DmfpError::InvalidConfig(_) => "invalid_config",
            DmfpError::SingleClass(_) => "single_class",
            DmfpError::DegenerateFold { .. } => "degenerate_fold",
            DmfpError::Empty(_) => "empty",
            DmfpError::NoNeighbors(_) => "no_neighbors",
            DmfpError::LengthMismatch { .. } => "length_mismatch",
            DmfpError::DegenerateClusters => "degenerate_clusters",
        }
    }
}
