use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong inside the laboratory.
///
/// Variants fall into two families: I/O problems and validation problems.
/// [`Error::is_io`] tells them apart so a command-line front end can map
/// them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic bytes: expected \"CAPE\"")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: need {needed} bytes, found {found}")]
    TruncatedData { needed: u64, found: u64 },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error(
        "shape mismatch for {name:?}: shape {shape:?} implies {expected} elements, got {actual}"
    )]
    ShapeMismatch {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("invalid tensor name: {0:?}")]
    InvalidName(String),

    #[error("checkpoints are not merge-compatible at tensor {name:?}: {reason}")]
    Incompatible { name: String, reason: String },
    #[error("mixing coefficient must be finite, got {0}")]
    NonFiniteAlpha(f64),
    #[error("cannot average an empty list of checkpoints")]
    EmptyMerge,

    #[error("invalid corpus config: {0}")]
    InvalidCorpusConfig(String),
    #[error("invalid train config: {0}")]
    InvalidTrainConfig(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite training loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("example id mismatch at position {index}: corpus has {expected:?}, summaries have {found:?}")]
    IdMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::MissingArtifact(_) | Error::Locked(_) => true,
            Error::Stage { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
