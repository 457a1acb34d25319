//! Per-path relevance scores: model attention (via the adapter), embedding
//! similarity, and mean personalized PageRank.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::adapter::{wire, Adapter, AdapterError, Embedder, EP_SCORE_PATHS};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, PageRankConfig};
use crate::retrieval::{Question, ReasoningPath, RetrievedPath};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Attention,
    Similarity,
    Pagerank,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: ReasoningPath,
    pub score: f64,
    pub scorer: ScorerKind,
}

/// Per-question min-max scaling to [0,1]; an all-equal input maps to 1.0.
pub fn min_max_normalize(raw: &[f64]) -> Vec<f64> {
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if raw.is_empty() {
        return Vec::new();
    }
    if hi - lo <= 0.0 {
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|&s| if s == hi { 1.0 } else { (s - lo) / (hi - lo) })
        .collect()
}

fn attach(paths: &[ReasoningPath], scores: Vec<f64>, scorer: ScorerKind) -> Vec<ScoredPath> {
    paths
        .iter()
        .cloned()
        .zip(scores)
        .map(|(path, score)| ScoredPath {
            path,
            score,
            scorer,
        })
        .collect()
}

fn scorer_error(e: AdapterError) -> Error {
    if e.is_protocol_violation() {
        Error::Protocol(e)
    } else {
        Error::ScorerUnavailable(e)
    }
}

/// One `/v1/score_paths` call with every verbalized path; scores are
/// min-max normalized per question.
pub fn score_attention(
    adapter: &dyn Adapter,
    q: &Question,
    paths: &[ReasoningPath],
) -> Result<Vec<ScoredPath>> {
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = paths.iter().map(ReasoningPath::verbalize).collect();
    let raw = adapter.score_paths(&q.text, &texts).map_err(scorer_error)?;
    wire::validate_scores(texts.len(), &raw).map_err(|message| {
        Error::Protocol(AdapterError::ProtocolViolation {
            endpoint: EP_SCORE_PATHS,
            message,
        })
    })?;
    Ok(attach(
        paths,
        min_max_normalize(&raw),
        ScorerKind::Attention,
    ))
}

/// TF-IDF bag of words fitted on the texts of a single call, so each
/// question's path pool gets its own vocabulary and document frequencies.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalEmbedder;

impl LexicalEmbedder {
    pub fn embed_texts(texts: &[String]) -> Vec<Vec<f64>> {
        let docs: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in &docs {
            let mut uniq: Vec<&str> = doc.iter().map(String::as_str).collect();
            uniq.sort_unstable();
            uniq.dedup();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let index: HashMap<&str, usize> = df.keys().enumerate().map(|(i, t)| (*t, i)).collect();
        let idf: Vec<f64> = df
            .values()
            .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        docs.iter()
            .map(|doc| {
                let mut v = vec![0.0; idf.len()];
                for t in doc {
                    v[index[t.as_str()]] += 1.0;
                }
                v.iter_mut().zip(&idf).for_each(|(x, w)| *x *= w);
                v
            })
            .collect()
    }
}

impl Embedder for LexicalEmbedder {
    fn embed(&self, texts: &[String]) -> std::result::Result<Vec<Vec<f64>>, AdapterError> {
        Ok(Self::embed_texts(texts))
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `(1 + cos(question, path)) / 2` per path. Not min-max normalized.
pub fn score_similarity(
    embedder: &dyn Embedder,
    q: &Question,
    paths: &[ReasoningPath],
) -> Result<Vec<ScoredPath>> {
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let mut texts = Vec::with_capacity(paths.len() + 1);
    texts.push(q.text.clone());
    texts.extend(paths.iter().map(ReasoningPath::verbalize));
    let vectors = embedder.embed(&texts).map_err(scorer_error)?;
    wire::validate_embeddings(texts.len(), &vectors).map_err(|message| {
        Error::Protocol(AdapterError::ProtocolViolation {
            endpoint: crate::adapter::EP_EMBED,
            message,
        })
    })?;
    let scores = vectors[1..]
        .iter()
        .map(|v| (1.0 + cosine(&vectors[0], v)) / 2.0)
        .collect();
    Ok(attach(paths, scores, ScorerKind::Similarity))
}

/// Mean PageRank of each path's entities, before normalization. PageRank is
/// seeded on the resolvable topic entities, or global when there are none.
/// Entities absent from the graph contribute 0.
pub fn pagerank_raw_scores(
    g: &KnowledgeGraph,
    q: &Question,
    paths: &[ReasoningPath],
    cfg: &PageRankConfig,
) -> Result<Vec<f64>> {
    let seeds: Vec<EntityId> = q
        .topic_entities
        .iter()
        .filter_map(|e| g.entity_id(e))
        .collect();
    let pr = g.personalized_pagerank(&seeds, cfg)?;
    Ok(paths
        .iter()
        .map(|p| {
            let total: f64 = p
                .entities()
                .iter()
                .map(|e| g.entity_id(e).map_or(0.0, |id| pr.score(id)))
                .sum();
            total / p.entities().len() as f64
        })
        .collect())
}

pub fn score_pagerank(
    g: &KnowledgeGraph,
    q: &Question,
    paths: &[ReasoningPath],
    cfg: &PageRankConfig,
) -> Result<Vec<ScoredPath>> {
    if paths.is_empty() {
        return Ok(Vec::new());
    }
    let raw = pagerank_raw_scores(g, q, paths, cfg)?;
    Ok(attach(paths, min_max_normalize(&raw), ScorerKind::Pagerank))
}

/// Uses the external retriever's own scores (missing → 0), normalized.
pub fn score_external(paths: &[RetrievedPath]) -> Vec<ScoredPath> {
    let plain: Vec<ReasoningPath> = paths.iter().map(|p| p.path.clone()).collect();
    let raw: Vec<f64> = paths
        .iter()
        .map(|p| p.external_score.unwrap_or(0.0).max(0.0))
        .collect();
    attach(&plain, min_max_normalize(&raw), ScorerKind::External)
}
