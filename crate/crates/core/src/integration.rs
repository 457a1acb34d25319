//! Confidence filtering of the retrieval-augmented and standalone answer
//! sets, and their combination into the final answer.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterError};
use crate::error::{Error, Result};
use crate::prompting::{build_llm_only_prompt, PromptBundle};
use crate::retrieval::Question;
use crate::text::normalize_answer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub text: String,
    pub confidence: f64,
}

impl AnswerCandidate {
    pub fn new(text: impl Into<String>, confidence: f64) -> Self {
        Self {
            text: text.into(),
            confidence,
        }
    }

    pub fn key(&self) -> String {
        normalize_answer(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerOrigin {
    Graphrag,
    LlmOnly,
    Combined,
}

/// Answers with unique normalized text, in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<AnswerCandidate>,
    pub origin: AnswerOrigin,
}

impl AnswerSet {
    /// Drops empty texts and merges duplicates, keeping the first position
    /// and the highest confidence.
    pub fn new(
        candidates: impl IntoIterator<Item = AnswerCandidate>,
        origin: AnswerOrigin,
    ) -> Self {
        let mut answers: Vec<AnswerCandidate> = Vec::new();
        let mut pos: HashMap<String, usize> = HashMap::new();
        for c in candidates {
            let key = c.key();
            if key.is_empty() {
                continue;
            }
            match pos.get(&key) {
                Some(&i) => {
                    if c.confidence > answers[i].confidence {
                        answers[i].confidence = c.confidence;
                    }
                }
                None => {
                    pos.insert(key, answers.len());
                    answers.push(c);
                }
            }
        }
        Self { answers, origin }
    }

    pub fn empty(origin: AnswerOrigin) -> Self {
        Self {
            answers: Vec::new(),
            origin,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn texts(&self) -> Vec<String> {
        self.answers.iter().map(|a| a.text.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineFallback {
    GraphragUnfiltered,
    LlmUnfiltered,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrationConfig {
    pub tau_g: f64,
    pub tau_l: f64,
    pub fallback: CombineFallback,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            tau_g: 0.5,
            tau_l: 1.0,
            fallback: CombineFallback::GraphragUnfiltered,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_g", self.tau_g), ("tau_l", self.tau_l)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0,1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Keeps answers with confidence ≥ `tau`, in order.
pub fn filter_answers(s: &AnswerSet, tau: f64) -> AnswerSet {
    AnswerSet {
        answers: s
            .answers
            .iter()
            .filter(|a| a.confidence >= tau)
            .cloned()
            .collect(),
        origin: s.origin,
    }
}

/// Ordered union: retrieval-augmented answers first, then standalone answers
/// not already present. A collision keeps the first position and the higher
/// confidence. If the union is empty, `cfg.fallback` picks an unfiltered set.
pub fn combine(
    graphrag: &AnswerSet,
    llm_only: &AnswerSet,
    unfiltered_graphrag: &AnswerSet,
    unfiltered_llm_only: &AnswerSet,
    cfg: &IntegrationConfig,
) -> AnswerSet {
    let merged = AnswerSet::new(
        graphrag.answers.iter().chain(&llm_only.answers).cloned(),
        AnswerOrigin::Combined,
    );
    if !merged.is_empty() {
        return merged;
    }
    let source = match cfg.fallback {
        CombineFallback::GraphragUnfiltered => unfiltered_graphrag,
        CombineFallback::LlmUnfiltered => unfiltered_llm_only,
        CombineFallback::Empty => return merged,
    };
    AnswerSet::new(source.answers.iter().cloned(), AnswerOrigin::Combined)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationRecord {
    pub raw_graphrag: Option<AnswerSet>,
    pub raw_llm_only: Option<AnswerSet>,
    pub filtered_graphrag: AnswerSet,
    pub filtered_llm_only: AnswerSet,
    #[serde(rename = "final")]
    pub final_answers: AnswerSet,
    pub fallback_applied: bool,
    /// Set when one of the two answer calls failed and the other was used alone.
    pub partial_integration: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    pub config: IntegrationConfig,
    /// Wall-clock milliseconds for the (graphrag, llm_only) calls.
    #[serde(skip)]
    pub latency_ms: (Option<f64>, Option<f64>),
}

fn timed_answer(
    adapter: &dyn Adapter,
    prompt: &str,
    max_new_tokens: usize,
    origin: AnswerOrigin,
) -> (std::result::Result<AnswerSet, AdapterError>, f64) {
    let start = Instant::now();
    let r = adapter
        .answer(prompt, max_new_tokens)
        .map(|reply| AnswerSet::new(reply.answers, origin));
    (r, start.elapsed().as_secs_f64() * 1e3)
}

/// Asks for answers with and without retrieved paths (concurrently),
/// filters each by its threshold, and combines.
pub fn integrate(
    adapter: &dyn Adapter,
    q: &Question,
    rag_prompt: &PromptBundle,
    cfg: &IntegrationConfig,
    max_new_tokens: usize,
) -> Result<IntegrationRecord> {
    cfg.validate()?;
    let llm_prompt = build_llm_only_prompt(q)?;
    let ((rag, rag_ms), (llm, llm_ms)) = std::thread::scope(|s| {
        let rag = s.spawn(|| {
            timed_answer(
                adapter,
                &rag_prompt.text,
                max_new_tokens,
                AnswerOrigin::Graphrag,
            )
        });
        let llm = timed_answer(
            adapter,
            &llm_prompt.text,
            max_new_tokens,
            AnswerOrigin::LlmOnly,
        );
        (rag.join().expect("answer thread panicked"), llm)
    });

    let mut errors = Vec::new();
    let (raw_g, raw_l) = match (rag, llm) {
        (Err(g), Err(l)) => {
            return Err(Error::IntegrationUnavailable {
                graphrag: g,
                llm_only: l,
            })
        }
        (g, l) => {
            let g = g.map_err(|e| errors.push(format!("graphrag: {e}"))).ok();
            let l = l.map_err(|e| errors.push(format!("llm_only: {e}"))).ok();
            (g, l)
        }
    };
    let partial_integration = raw_g.is_none() || raw_l.is_none();
    let none_g = AnswerSet::empty(AnswerOrigin::Graphrag);
    let none_l = AnswerSet::empty(AnswerOrigin::LlmOnly);
    let unf_g = raw_g.as_ref().unwrap_or(&none_g);
    let unf_l = raw_l.as_ref().unwrap_or(&none_l);
    let filtered_graphrag = filter_answers(unf_g, cfg.tau_g);
    let filtered_llm_only = filter_answers(unf_l, cfg.tau_l);
    let final_answers = combine(&filtered_graphrag, &filtered_llm_only, unf_g, unf_l, cfg);
    let fallback_applied = filtered_graphrag.is_empty() && filtered_llm_only.is_empty();

    Ok(IntegrationRecord {
        raw_graphrag: raw_g,
        raw_llm_only: raw_l,
        filtered_graphrag,
        filtered_llm_only,
        final_answers,
        fallback_applied,
        partial_integration,
        errors,
        config: cfg.clone(),
        latency_ms: (Some(rag_ms), Some(llm_ms)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{wire, AnswerReply, JudgeReply, EP_ANSWER};
    use crate::prompting::LLM_ONLY_INSTRUCTION;
    use proptest::prelude::*;

    fn set(items: &[(&str, f64)], origin: AnswerOrigin) -> AnswerSet {
        AnswerSet::new(
            items.iter().map(|(t, c)| AnswerCandidate::new(*t, *c)),
            origin,
        )
    }

    fn g(items: &[(&str, f64)]) -> AnswerSet {
        set(items, AnswerOrigin::Graphrag)
    }

    fn l(items: &[(&str, f64)]) -> AnswerSet {
        set(items, AnswerOrigin::LlmOnly)
    }

    #[test]
    fn threshold_one_keeps_only_certain() {
        let s = l(&[("x", 1.0), ("y", 0.6)]);
        assert_eq!(filter_answers(&s, 1.0).texts(), ["x"]);
        assert_eq!(filter_answers(&s, 0.0), s);
        assert_eq!(filter_answers(&g(&[("x", 0.5)]), 0.5).texts(), ["x"]);
    }

    #[test]
    fn combine_examples() {
        let cfg = IntegrationConfig::default();
        let e_g = g(&[]);
        let e_l = l(&[]);
        assert_eq!(
            combine(
                &g(&[("x", 0.9)]),
                &l(&[("x", 1.0), ("y", 1.0)]),
                &e_g,
                &e_l,
                &cfg
            )
            .texts(),
            ["x", "y"]
        );
        assert_eq!(
            combine(&e_g, &l(&[("y", 1.0)]), &e_g, &e_l, &cfg).texts(),
            ["y"]
        );
        let raw = g(&[("z", 0.3)]);
        assert_eq!(combine(&e_g, &e_l, &raw, &e_l, &cfg).texts(), ["z"]);
        let empty_cfg = IntegrationConfig {
            fallback: CombineFallback::Empty,
            ..cfg.clone()
        };
        assert!(combine(&e_g, &e_l, &raw, &e_l, &empty_cfg).is_empty());
        let llm_cfg = IntegrationConfig {
            fallback: CombineFallback::LlmUnfiltered,
            ..cfg
        };
        assert_eq!(
            combine(&e_g, &e_l, &raw, &l(&[("w", 0.2)]), &llm_cfg).texts(),
            ["w"]
        );
    }

    #[test]
    fn collision_keeps_higher_confidence() {
        let out = combine(
            &g(&[("University of Northern Colorado", 0.6)]),
            &l(&[("university of northern colorado ", 1.0)]),
            &g(&[]),
            &l(&[]),
            &IntegrationConfig::default(),
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out.answers[0].text, "University of Northern Colorado");
        assert_eq!(out.answers[0].confidence, 1.0);
    }

    struct Scripted {
        rag: std::result::Result<Vec<AnswerCandidate>, AdapterError>,
        llm: std::result::Result<Vec<AnswerCandidate>, AdapterError>,
    }

    impl Adapter for Scripted {
        fn health(&self) -> std::result::Result<wire::Health, AdapterError> {
            unimplemented!()
        }
        fn score_paths(
            &self,
            _: &str,
            _: &[String],
        ) -> std::result::Result<Vec<f64>, AdapterError> {
            unimplemented!()
        }
        fn judge(&self, _: &str, _: &[String]) -> std::result::Result<JudgeReply, AdapterError> {
            unimplemented!()
        }
        fn answer(&self, prompt: &str, _: usize) -> std::result::Result<AnswerReply, AdapterError> {
            let r = if prompt.starts_with(LLM_ONLY_INSTRUCTION) {
                &self.llm
            } else {
                &self.rag
            };
            r.clone().map(|answers| AnswerReply {
                answers,
                raw_text: String::new(),
            })
        }
    }

    fn question() -> Question {
        Question {
            id: "q".into(),
            text: "Which?".into(),
            topic_entities: vec![],
            gold_answers: vec!["right".into()],
        }
    }

    fn rag_prompt() -> PromptBundle {
        crate::prompting::build_prompt(&question(), &Default::default(), 8000)
    }

    fn down() -> AdapterError {
        AdapterError::Unavailable {
            endpoint: EP_ANSWER,
            attempts: 3,
            message: "refused".into(),
        }
    }

    #[test]
    fn standalone_answer_rescues_bad_retrieval() {
        let a = Scripted {
            rag: Ok(vec![AnswerCandidate::new("wrong", 0.3)]),
            llm: Ok(vec![AnswerCandidate::new("right", 1.0)]),
        };
        let rec = integrate(
            &a,
            &question(),
            &rag_prompt(),
            &IntegrationConfig::default(),
            256,
        )
        .unwrap();
        assert_eq!(rec.final_answers.texts(), ["right"]);
        assert!(!rec.partial_integration);
    }

    #[test]
    fn retrieval_answer_survives_uncertain_standalone() {
        let a = Scripted {
            rag: Ok(vec![AnswerCandidate::new("right", 0.9)]),
            llm: Ok(vec![AnswerCandidate::new("wrong", 0.7)]),
        };
        let rec = integrate(
            &a,
            &question(),
            &rag_prompt(),
            &IntegrationConfig::default(),
            256,
        )
        .unwrap();
        assert_eq!(rec.final_answers.texts(), ["right"]);
        assert!(rec.filtered_llm_only.is_empty());
    }

    #[test]
    fn one_failed_call_is_partial_both_is_error() {
        let a = Scripted {
            rag: Err(down()),
            llm: Ok(vec![AnswerCandidate::new("right", 1.0)]),
        };
        let rec = integrate(
            &a,
            &question(),
            &rag_prompt(),
            &IntegrationConfig::default(),
            256,
        )
        .unwrap();
        assert!(rec.partial_integration);
        assert_eq!(rec.final_answers.texts(), ["right"]);
        assert!(rec.raw_graphrag.is_none());

        let a = Scripted {
            rag: Err(down()),
            llm: Err(down()),
        };
        let err = integrate(
            &a,
            &question(),
            &rag_prompt(),
            &IntegrationConfig::default(),
            256,
        )
        .unwrap_err();
        assert!(matches!(err, Error::IntegrationUnavailable { .. }));
        assert!(err.is_unavailable());
    }

    #[test]
    fn config_range_checked() {
        let bad = IntegrationConfig {
            tau_g: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn answers() -> impl Strategy<Value = Vec<(String, f64)>> {
        prop::collection::vec(("[a-d]{1,2}( [A-D])?", 0.0f64..=1.0), 0..8)
    }

    fn build(v: &[(String, f64)], origin: AnswerOrigin) -> AnswerSet {
        AnswerSet::new(
            v.iter().map(|(t, c)| AnswerCandidate::new(t.clone(), *c)),
            origin,
        )
    }

    proptest! {
        #[test]
        fn filter_is_monotone_subset(v in answers(), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let s = build(&v, AnswerOrigin::Graphrag);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = filter_answers(&s, lo);
            let b = filter_answers(&s, hi);
            prop_assert!(b.answers.iter().all(|x| a.answers.contains(x)));
            prop_assert!(a.answers.iter().all(|x| s.answers.contains(x)));
            prop_assert_eq!(filter_answers(&a, lo), a);
        }

        #[test]
        fn combine_has_unique_keys_and_identities(vg in answers(), vl in answers()) {
            let sg = build(&vg, AnswerOrigin::Graphrag);
            let sl = build(&vl, AnswerOrigin::LlmOnly);
            let cfg = IntegrationConfig::default();
            let out = combine(&sg, &sl, &sg, &sl, &cfg);
            let mut keys: Vec<String> = out.answers.iter().map(|a| a.key()).collect();
            let n = keys.len();
            keys.sort();
            keys.dedup();
            prop_assert_eq!(keys.len(), n);
            prop_assert_eq!(&out, &combine(&sg, &sl, &sg, &sl, &cfg));
            let empty_l = AnswerSet::empty(AnswerOrigin::LlmOnly);
            let empty_g = AnswerSet::empty(AnswerOrigin::Graphrag);
            if !sg.is_empty() {
                prop_assert_eq!(&combine(&sg, &empty_l, &sg, &empty_l, &cfg).answers, &sg.answers);
            }
            if !sl.is_empty() {
                prop_assert_eq!(&combine(&empty_g, &sl, &empty_g, &sl, &cfg).answers, &sl.answers);
            }
            // Zero thresholds reduce integration to a deduplicated ordered union.
            let zero = IntegrationConfig { tau_g: 0.0, tau_l: 0.0, ..cfg };
            let merged = combine(&filter_answers(&sg, zero.tau_g), &filter_answers(&sl, zero.tau_l), &sg, &sl, &zero);
            let naive = AnswerSet::new(sg.answers.iter().chain(&sl.answers).cloned(), AnswerOrigin::Combined);
            prop_assert_eq!(merged, naive);
        }
    }
}
