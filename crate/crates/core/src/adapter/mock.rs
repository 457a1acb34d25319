//! Deterministic in-process adapter driven by a JSON fixture, with a
//! heuristic fallback for questions the fixture does not script.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::wire::{self, Health, WireAnswer};
use super::{attention_layer_for, Adapter, AdapterError, AnswerReply, JudgeReply, EP_ANSWER};
use crate::error::{Error, Result};
use crate::prompting::{
    ADDITIONAL_HEADER, HIGH_PRIORITY_HEADER, QUESTION_HEADER, REASONING_HEADER,
};
use crate::retrieval::{Question, ARROW};
use crate::text::tokenize;

const HEURISTIC_CONFIDENCE: f64 = 0.9;
const MOCK_LAYERS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreScript {
    /// Returned verbatim, whatever the number of paths.
    List(Vec<f64>),
    /// Looked up per path text; unlisted paths get the heuristic score.
    ByText(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag: Option<Vec<WireAnswer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_only: Option<Vec<WireAnswer>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    /// Question text; adapter calls are matched on it.
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreScript>,
    /// Path texts the judge selects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<Vec<String>>,
    /// Raw indices returned as-is (may be unsorted or out of range).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_indices: Option<Vec<i64>>,
    #[serde(default)]
    pub answers: AnswerScript,
}

/// Scripted replies keyed by question id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub questions: BTreeMap<String, FixtureEntry>,
}

impl MockFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let fixture: MockFixture = serde_json::from_str(&text).map_err(|e| Error::Fixture {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |location: String, message: &str| Error::Fixture {
            location,
            message: message.to_owned(),
        };
        let mut texts = HashSet::new();
        for (id, entry) in &self.questions {
            let base = format!("questions.{id}");
            if entry.question.trim().is_empty() {
                return Err(bad(format!("{base}.question"), "empty question text"));
            }
            if !texts.insert(entry.question.as_str()) {
                return Err(bad(
                    format!("{base}.question"),
                    "question text used by two entries",
                ));
            }
            let ok = |s: f64| s.is_finite() && s >= 0.0;
            match &entry.scores {
                Some(ScoreScript::List(list)) => {
                    if let Some(i) = list.iter().position(|&s| !ok(s)) {
                        return Err(bad(
                            format!("{base}.scores[{i}]"),
                            "score must be finite and >= 0",
                        ));
                    }
                }
                Some(ScoreScript::ByText(map)) => {
                    if let Some((k, _)) = map.iter().find(|(_, &s)| !ok(s)) {
                        return Err(bad(
                            format!("{base}.scores[{k:?}]"),
                            "score must be finite and >= 0",
                        ));
                    }
                }
                None => {}
            }
            for (kind, list) in [
                ("rag", &entry.answers.rag),
                ("llm_only", &entry.answers.llm_only),
            ] {
                if let Some(list) = list {
                    if let Some(i) = list.iter().position(|a| {
                        !(a.confidence.is_finite() && (0.0..=1.0).contains(&a.confidence))
                    }) {
                        return Err(bad(
                            format!("{base}.answers.{kind}[{i}].confidence"),
                            "confidence must lie in [0,1]",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockAdapter {
    fixture: MockFixture,
    by_text: HashMap<String, String>,
    gold: HashMap<String, Vec<String>>,
}

fn overlap_score(question_tokens: &HashSet<String>, path: &str) -> f64 {
    let tokens: HashSet<String> = tokenize(path).into_iter().collect();
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.intersection(question_tokens).count() as f64 / tokens.len() as f64
}

/// Splits a prompt built by [`crate::prompting`] into its kind, question
/// text, and the path lines of each tier.
struct ParsedPrompt<'a> {
    rag: bool,
    question: &'a str,
    high: Vec<&'a str>,
    additional: Vec<&'a str>,
}

fn parse_prompt(prompt: &str) -> ParsedPrompt<'_> {
    let marker = format!("\n{QUESTION_HEADER}\n");
    let (body, question) = match prompt.rfind(&marker) {
        Some(i) => (&prompt[..i], &prompt[i + marker.len()..]),
        None => (prompt, ""),
    };
    let rag = body.lines().any(|l| l == REASONING_HEADER);
    let mut high = Vec::new();
    let mut additional = Vec::new();
    let mut tier = 0;
    for line in body.lines() {
        if line == HIGH_PRIORITY_HEADER {
            tier = 1;
        } else if line == ADDITIONAL_HEADER {
            tier = 2;
        } else if line.is_empty() {
            continue;
        } else if tier == 1 {
            high.push(line);
        } else if tier == 2 {
            additional.push(line);
        }
    }
    ParsedPrompt {
        rag,
        question,
        high,
        additional,
    }
}

impl MockAdapter {
    pub fn new(fixture: MockFixture) -> Result<Self> {
        fixture.validate()?;
        let by_text = fixture
            .questions
            .iter()
            .map(|(id, e)| (e.question.clone(), id.clone()))
            .collect();
        Ok(Self {
            fixture,
            by_text,
            gold: HashMap::new(),
        })
    }

    /// Registers gold answers used by the heuristic judge for unscripted questions.
    pub fn with_questions(mut self, questions: &[Question]) -> Self {
        for q in questions {
            self.gold.insert(q.text.clone(), q.gold_answers.clone());
        }
        self
    }

    fn entry(&self, question: &str) -> Option<&FixtureEntry> {
        self.by_text
            .get(question)
            .and_then(|id| self.fixture.questions.get(id))
    }

    fn gold_for(&self, question: &str) -> &[String] {
        match self.entry(question) {
            Some(e) if !e.gold_answers.is_empty() => &e.gold_answers,
            _ => self.gold.get(question).map(Vec::as_slice).unwrap_or(&[]),
        }
    }
}

impl Adapter for MockAdapter {
    fn health(&self) -> std::result::Result<Health, AdapterError> {
        Ok(Health {
            model: "mock".into(),
            n_layers: MOCK_LAYERS,
            attention_layer: attention_layer_for(MOCK_LAYERS),
        })
    }

    fn score_paths(
        &self,
        question: &str,
        paths: &[String],
    ) -> std::result::Result<Vec<f64>, AdapterError> {
        let q_tokens: HashSet<String> = tokenize(question).into_iter().collect();
        let script = self.entry(question).and_then(|e| e.scores.as_ref());
        Ok(match script {
            Some(ScoreScript::List(list)) => list.clone(),
            Some(ScoreScript::ByText(map)) => paths
                .iter()
                .map(|p| {
                    map.get(p)
                        .copied()
                        .unwrap_or_else(|| overlap_score(&q_tokens, p))
                })
                .collect(),
            None => paths.iter().map(|p| overlap_score(&q_tokens, p)).collect(),
        })
    }

    fn judge(
        &self,
        question: &str,
        paths: &[String],
    ) -> std::result::Result<JudgeReply, AdapterError> {
        let entry = self.entry(question);
        let selected: Vec<i64> = if let Some(idx) = entry.and_then(|e| e.judge_indices.as_ref()) {
            idx.clone()
        } else if let Some(texts) = entry.and_then(|e| e.judge.as_ref()) {
            let wanted: HashSet<&str> = texts.iter().map(String::as_str).collect();
            (0..paths.len())
                .filter(|&i| wanted.contains(paths[i].as_str()))
                .map(|i| i as i64)
                .collect()
        } else {
            let gold_tokens: HashSet<String> = self
                .gold_for(question)
                .iter()
                .flat_map(|g| tokenize(g))
                .collect();
            (0..paths.len())
                .filter(|&i| tokenize(&paths[i]).iter().any(|t| gold_tokens.contains(t)))
                .map(|i| i as i64)
                .collect()
        };
        let raw = serde_json::json!({ "selected": selected }).to_string();
        Ok(JudgeReply { selected, raw })
    }

    fn answer(
        &self,
        prompt: &str,
        _max_new_tokens: usize,
    ) -> std::result::Result<AnswerReply, AdapterError> {
        let parsed = parse_prompt(prompt);
        let scripted = self.entry(parsed.question).and_then(|e| {
            if parsed.rag {
                e.answers.rag.clone()
            } else {
                e.answers.llm_only.clone()
            }
        });
        let wire_answers = match scripted {
            Some(list) => list,
            None if parsed.rag => parsed
                .high
                .first()
                .or(parsed.additional.first())
                .map(|line| {
                    vec![WireAnswer {
                        text: line.rsplit(ARROW).next().unwrap_or(line).to_owned(),
                        confidence: HEURISTIC_CONFIDENCE,
                    }]
                })
                .unwrap_or_default(),
            None => Vec::new(),
        };
        let answers = wire::validate_answers(&wire_answers).map_err(|message| {
            AdapterError::ProtocolViolation {
                endpoint: EP_ANSWER,
                message,
            }
        })?;
        let raw_text = format!(
            "[{}]",
            answers
                .iter()
                .map(|a| a.text.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        );
        Ok(AnswerReply { answers, raw_text })
    }
}
