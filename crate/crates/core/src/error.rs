use std::path::PathBuf;

use crate::adapter::AdapterError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("empty graph")]
    EmptyGraph,
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("empty_question: question {0:?} has no text")]
    EmptyQuestion(String),
    #[error("empty gold answer set for question {0:?}")]
    EmptyGold(String),
    #[error("duplicate id {id:?} in {path}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("fixture error at {location}: {message}")]
    Fixture { location: String, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("scorer_unavailable: {0}")]
    ScorerUnavailable(#[source] AdapterError),
    #[error("judge_unavailable: {0}")]
    JudgeUnavailable(#[source] AdapterError),
    #[error("answer_unavailable: {0}")]
    AnswerUnavailable(#[source] AdapterError),
    #[error("integration_unavailable: graphrag: {graphrag}; llm_only: {llm_only}")]
    IntegrationUnavailable {
        graphrag: AdapterError,
        llm_only: AdapterError,
    },
    #[error("protocol_violation: {0}")]
    Protocol(#[source] AdapterError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for the `*_unavailable` family: the model adapter could not be reached.
    pub fn is_unavailable(&self) -> bool {
        matches!(
            self,
            Error::ScorerUnavailable(_)
                | Error::JudgeUnavailable(_)
                | Error::AnswerUnavailable(_)
                | Error::IntegrationUnavailable { .. }
        )
    }
}

impl Error {
    /// Short machine-readable tag, as written to `errors.jsonl`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyGraph => "empty_graph",
            Error::UnknownEntity(_) => "unknown_entity",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidPath(_) => "invalid_path",
            Error::EmptyQuestion(_) => "empty_question",
            Error::EmptyGold(_) => "empty_gold",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::Fixture { .. } => "fixture",
            Error::Config(_) => "config",
            Error::ScorerUnavailable(_) => "scorer_unavailable",
            Error::JudgeUnavailable(_) => "judge_unavailable",
            Error::AnswerUnavailable(_) => "answer_unavailable",
            Error::IntegrationUnavailable { .. } => "integration_unavailable",
            Error::Protocol(_) => "protocol_violation",
        }
    }
}
