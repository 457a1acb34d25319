//! Tiered reasoning prompt: instruction, high-priority paths, additional
//! paths, question. The layout is byte-exact and LF-only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::FilterOutcome;
use crate::retrieval::Question;

pub const RAG_INSTRUCTION: &str = "Based on the reasoning paths, please answer the given question. Please keep the answer as simple as possible and return all the possible answers as a list.";
pub const LLM_ONLY_INSTRUCTION: &str =
    "Please answer the given question. Please keep the answer as simple as possible and return all the possible answers as a list.";
pub const REASONING_HEADER: &str = "Reasoning Paths:";
pub const HIGH_PRIORITY_HEADER: &str = "High Priority Paths:";
pub const ADDITIONAL_HEADER: &str = "Additional Paths:";
pub const QUESTION_HEADER: &str = "Question:";

pub const DEFAULT_MAX_CHARS: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    pub high_priority_count: usize,
    pub additional_count: usize,
    pub truncated: bool,
}

fn render(q: &Question, high: &[String], additional: &[String]) -> String {
    let mut out = String::new();
    out.push_str(RAG_INSTRUCTION);
    out.push_str("\n\n");
    out.push_str(REASONING_HEADER);
    out.push_str("\n\n");
    out.push_str(HIGH_PRIORITY_HEADER);
    out.push('\n');
    for line in high {
        out.push_str(line);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(ADDITIONAL_HEADER);
    out.push('\n');
    for line in additional {
        out.push_str(line);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(QUESTION_HEADER);
    out.push('\n');
    out.push_str(&q.text);
    out
}

/// Builds the reasoning prompt. When it exceeds `max_chars` (counted in
/// chars), additional paths are dropped from the end until it fits; high
/// priority paths are never dropped.
pub fn build_prompt(q: &Question, outcome: &FilterOutcome, max_chars: usize) -> PromptBundle {
    let high = outcome.final_texts();
    let mut additional = outcome.residual_texts();
    let mut text = render(q, &high, &additional);
    let mut len = text.chars().count();
    let mut truncated = false;
    while len > max_chars {
        truncated = true;
        match additional.pop() {
            // One path line plus its newline.
            Some(line) => len -= line.chars().count() + 1,
            None => break,
        }
    }
    if truncated {
        text = render(q, &high, &additional);
    }
    PromptBundle {
        text,
        high_priority_count: high.len(),
        additional_count: additional.len(),
        truncated,
    }
}

pub fn build_llm_only_prompt(q: &Question) -> Result<PromptBundle> {
    if q.text.trim().is_empty() {
        return Err(Error::EmptyQuestion(q.id.clone()));
    }
    Ok(PromptBundle {
        text: format!("{LLM_ONLY_INSTRUCTION}\n\n{QUESTION_HEADER}\n{}", q.text),
        high_priority_count: 0,
        additional_count: 0,
        truncated: false,
    })
}
