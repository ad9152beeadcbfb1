//! Few-shot relational triple extraction.
//!
//! Given a support set of `N` relations with `K` annotated sentences each,
//! the pipeline builds per-relation entity prototypes, classifies a query
//! sentence's relation by matching it against fused prototypes, and then
//! tags the subject and object spans with a CRF conditioned on that
//! relation.
//!
//! Everything runs on a small reverse-mode tape ([`numeric`]) so the whole
//! model is trainable and gradient-checkable without external ML crates.

pub mod corpus;
pub mod encoder;
pub mod entdec;
pub mod fusion;
pub mod harness;
pub mod numeric;
pub mod prototype;
pub mod registry;
pub mod reldec;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use corpus::CorpusError;
pub use harness::checkpoint::CheckpointError;
pub use numeric::NumericError;
pub use registry::RegistryError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("sentence of {len} tokens does not fit (max_len {max_len})")]
    SentenceLength { len: usize, max_len: usize },
    #[error("gold index {gold} out of range for {n} relations")]
    GoldOutOfRange { gold: usize, n: usize },
    #[error("non-finite loss{}", param.as_ref().map(|p| format!(" at {p}[{index}]")).unwrap_or_default())]
    NonFiniteLoss { param: Option<String>, index: usize },
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("config: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Numeric(_) | Error::Shape(_) => "shape",
            Error::Corpus(_) => "corpus",
            Error::Registry(_) => "registry",
            Error::Checkpoint(_) => "checkpoint",
            Error::SentenceLength { .. } => "sentence",
            Error::GoldOutOfRange { .. } => "label",
            Error::NonFiniteLoss { .. } => "non-finite",
            Error::Vocabulary(_) => "vocabulary",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
