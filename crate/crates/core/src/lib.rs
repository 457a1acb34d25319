//! Knowledge-graph question answering with filtered retrieval.
//!
//! Paths retrieved from a knowledge graph are scored, cut down in two
//! stages (a score threshold, then a model judge), and laid out in a tiered
//! prompt. Answers produced with and without the retrieved paths are then
//! filtered by confidence and merged.

pub mod adapter;
pub mod error;
pub mod evaluation;
pub mod filtering;
pub mod integration;
pub mod kg;
pub mod pipeline;
pub mod prompting;
pub mod retrieval;
pub mod scoring;
pub mod text;

pub use error::{Error, Result};
pub use evaluation::{
    categorize, score_question, Category, CategoryBreakdown, EvalRecord, NoiseConfig,
};
pub use filtering::{CoarseMode, FilterConfig, FilterOutcome, JudgeFallback};
pub use integration::{AnswerCandidate, AnswerSet, IntegrationConfig};
pub use kg::{GraphFormat, KnowledgeGraph, PageRankConfig};
pub use pipeline::{Pipeline, RunConfig, RunReport};
pub use retrieval::{Question, ReasoningPath, RetrievalResult};
pub use scoring::{ScoredPath, ScorerKind};
