use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embedding::EmbedError;
use crate::ensemble::EnsembleError;
use crate::eval::EvalError;
use crate::evolve::EvolveError;
use crate::explain::ExplainError;
use crate::llm::LlmError;
use crate::rerank::RerankError;
use crate::vector_index::IndexError;

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    MissingArtifact,
    Provider,
    Validation,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::MissingArtifact => 2,
            ErrorKind::Provider => 3,
            ErrorKind::Validation => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("missing {what} at {path}: {hint}")]
    MissingArtifact {
        what: &'static str,
        path: String,
        hint: &'static str,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown posting id {0:?}")]
    UnknownPosting(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingArtifact { .. } => ErrorKind::MissingArtifact,
            Error::Config(_) | Error::Llm(LlmError::Template { .. }) => ErrorKind::Usage,
            Error::Corpus(CorpusError::Unreadable { .. }) | Error::Eval(EvalError::Io { .. }) => {
                ErrorKind::MissingArtifact
            }
            Error::Embed(e) if e.is_provider_failure() => ErrorKind::Provider,
            Error::Llm(LlmError::InvalidRequest(_)) => ErrorKind::Validation,
            Error::Llm(_) => ErrorKind::Provider,
            Error::Rerank(RerankError::Embed(e)) if e.is_provider_failure() => ErrorKind::Provider,
            Error::Rerank(RerankError::Llm(_)) => ErrorKind::Provider,
            Error::Evolve(e) if e.is_provider_failure() => ErrorKind::Provider,
            Error::Explain(e) if e.is_provider_failure() => ErrorKind::Provider,
            Error::Index(IndexError::Io(_)) | Error::Io { .. } => ErrorKind::MissingArtifact,
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
