//! Two-stage path filtering: a coarse cut on relevance scores followed by a
//! model judge that picks the high-priority subset of the survivors.

use serde::{Deserialize, Serialize};

use crate::adapter::Adapter;
use crate::error::{Error, Result};
use crate::retrieval::{Question, ReasoningPath};
use crate::scoring::ScoredPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseMode {
    /// Keep the k highest scores.
    TopK,
    /// Keep every score ≥ tau.
    Absolute,
}

/// What the fine stage does when the judge fails or its reply is unusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeFallback {
    /// final = coarse, residual = empty.
    KeepAll,
    /// final = empty, residual = coarse.
    DropAll,
    /// Surface the error.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub coarse_mode: CoarseMode,
    pub k: usize,
    pub tau: f64,
    pub coarse_enabled: bool,
    pub fine_enabled: bool,
    pub judge_fallback: JudgeFallback,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            coarse_mode: CoarseMode::TopK,
            k: 50,
            tau: 0.5,
            coarse_enabled: true,
            fine_enabled: true,
            judge_fallback: JudgeFallback::KeepAll,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        match self.coarse_mode {
            CoarseMode::TopK if self.k == 0 => {
                Err(Error::InvalidParameter("top_k mode needs k >= 1".into()))
            }
            CoarseMode::Absolute if !(0.0..=1.0).contains(&self.tau) => Err(
                Error::InvalidParameter(format!("tau must lie in [0,1], got {}", self.tau)),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub coarse: Vec<ScoredPath>,
    #[serde(rename = "final")]
    pub final_paths: Vec<ScoredPath>,
    /// `coarse − final`, in coarse order.
    pub residual: Vec<ScoredPath>,
    pub judge_raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_fallback: Option<String>,
}

/// Stage 1. Output is in descending score order; ties keep input order.
pub fn coarse_filter(paths: &[ScoredPath], cfg: &FilterConfig) -> Vec<ScoredPath> {
    let mut order: Vec<usize> = match cfg.coarse_mode {
        CoarseMode::Absolute => (0..paths.len())
            .filter(|&i| paths[i].score >= cfg.tau)
            .collect(),
        CoarseMode::TopK => (0..paths.len()).collect(),
    };
    order.sort_by(|&a, &b| paths[b].score.total_cmp(&paths[a].score));
    if cfg.coarse_mode == CoarseMode::TopK {
        order.truncate(cfg.k);
    }
    order.into_iter().map(|i| paths[i].clone()).collect()
}

fn split(coarse: Vec<ScoredPath>, keep: &[bool]) -> (Vec<ScoredPath>, Vec<ScoredPath>) {
    let mut final_paths = Vec::new();
    let mut residual = Vec::new();
    for (p, &k) in coarse.into_iter().zip(keep) {
        if k {
            final_paths.push(p);
        } else {
            residual.push(p);
        }
    }
    (final_paths, residual)
}

/// Stage 2. One judge call over the numbered coarse survivors. Indices
/// outside the list are ignored; final keeps coarse order.
pub fn fine_filter(
    adapter: &dyn Adapter,
    q: &Question,
    coarse: &[ScoredPath],
    cfg: &FilterConfig,
) -> Result<FilterOutcome> {
    if coarse.is_empty() {
        return Ok(FilterOutcome::default());
    }
    let texts: Vec<String> = coarse.iter().map(|p| p.path.verbalize()).collect();
    match adapter.judge(&q.text, &texts) {
        Ok(reply) => {
            let mut keep = vec![false; coarse.len()];
            for idx in reply.selected {
                if let Ok(i) = usize::try_from(idx) {
                    if i < keep.len() {
                        keep[i] = true;
                    }
                }
            }
            let (final_paths, residual) = split(coarse.to_vec(), &keep);
            Ok(FilterOutcome {
                coarse: coarse.to_vec(),
                final_paths,
                residual,
                judge_raw: reply.raw,
                judge_fallback: None,
            })
        }
        Err(e) => {
            let fill = match cfg.judge_fallback {
                JudgeFallback::KeepAll => true,
                JudgeFallback::DropAll => false,
                JudgeFallback::Error if e.is_protocol_violation() => {
                    return Err(Error::Protocol(e))
                }
                JudgeFallback::Error => return Err(Error::JudgeUnavailable(e)),
            };
            tracing::warn!(question = %q.id, error = %e, "judge failed, applying fallback");
            let (final_paths, residual) = split(coarse.to_vec(), &vec![fill; coarse.len()]);
            Ok(FilterOutcome {
                coarse: coarse.to_vec(),
                final_paths,
                residual,
                judge_raw: String::new(),
                judge_fallback: Some(e.to_string()),
            })
        }
    }
}

/// Coarse stage iff enabled, then fine stage iff enabled.
pub fn run_filter_pipeline(
    adapter: &dyn Adapter,
    q: &Question,
    scored: &[ScoredPath],
    cfg: &FilterConfig,
) -> Result<FilterOutcome> {
    cfg.validate()?;
    let coarse = if cfg.coarse_enabled {
        coarse_filter(scored, cfg)
    } else {
        scored.to_vec()
    };
    if cfg.fine_enabled {
        fine_filter(adapter, q, &coarse, cfg)
    } else {
        Ok(FilterOutcome {
            final_paths: coarse.clone(),
            coarse,
            ..Default::default()
        })
    }
}

impl FilterOutcome {
    pub fn final_texts(&self) -> Vec<String> {
        self.final_paths
            .iter()
            .map(|p| p.path.verbalize())
            .collect()
    }

    pub fn residual_texts(&self) -> Vec<String> {
        self.residual.iter().map(|p| p.path.verbalize()).collect()
    }

    pub fn final_path_set(&self) -> Vec<&ReasoningPath> {
        self.final_paths.iter().map(|p| &p.path).collect()
    }
}
