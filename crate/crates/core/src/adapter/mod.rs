//! Model-adapter protocol: the JSON-over-HTTP contract between the pipeline
//! and a model server, an HTTP client for it, an in-process fixture-driven
//! mock, and a small server that exposes any adapter over the wire.

mod http;
mod mock;
mod server;
pub mod wire;

pub use http::{AdapterEndpointConfig, HttpAdapter};
pub use mock::{AnswerScript, FixtureEntry, MockAdapter, MockFixture, ScoreScript};
pub use server::{AdapterServer, ServerHandle};

use crate::integration::AnswerCandidate;

pub const EP_HEALTH: &str = "/v1/health";
pub const EP_SCORE_PATHS: &str = "/v1/score_paths";
pub const EP_JUDGE: &str = "/v1/judge";
pub const EP_ANSWER: &str = "/v1/answer";
pub const EP_EMBED: &str = "/v1/embed";

pub const DEFAULT_MAX_NEW_TOKENS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdapterError {
    #[error("{endpoint} unavailable after {attempts} attempt(s): {message}")]
    Unavailable {
        endpoint: &'static str,
        attempts: u32,
        message: String,
    },
    #[error("{endpoint} protocol violation: {message}")]
    ProtocolViolation {
        endpoint: &'static str,
        message: String,
    },
    #[error("{endpoint} not supported by this adapter")]
    Unsupported { endpoint: &'static str },
}

impl AdapterError {
    pub fn is_protocol_violation(&self) -> bool {
        matches!(self, AdapterError::ProtocolViolation { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeReply {
    /// Selected indices as the adapter sent them. The HTTP client guarantees
    /// strictly increasing in-range values; in-process adapters may not.
    pub selected: Vec<i64>,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerReply {
    pub answers: Vec<AnswerCandidate>,
    pub raw_text: String,
}

/// The three model operations the pipeline needs, plus health.
///
/// Implementations are shared across worker threads.
pub trait Adapter: Send + Sync {
    fn health(&self) -> Result<wire::Health, AdapterError>;

    fn score_paths(&self, question: &str, paths: &[String]) -> Result<Vec<f64>, AdapterError>;

    fn judge(&self, question: &str, paths: &[String]) -> Result<JudgeReply, AdapterError>;

    fn answer(&self, prompt: &str, max_new_tokens: usize) -> Result<AnswerReply, AdapterError>;
}

/// Text embedding, used by the similarity scorer.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, AdapterError>;
}

/// `floor(n_layers / 2) + 2`, the layer whose attention is read for path scores.
pub fn attention_layer_for(n_layers: usize) -> usize {
    n_layers / 2 + 2
}
