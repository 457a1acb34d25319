//! Request/response bodies and the validators both sides of the wire share.

use serde::{Deserialize, Serialize};

use crate::integration::AnswerCandidate;
use crate::text::clean_whitespace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub model: String,
    pub n_layers: usize,
    pub attention_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsRequest {
    pub question: String,
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresResponse {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub selected: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub prompt: String,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
}

fn default_max_new_tokens() -> usize {
    super::DEFAULT_MAX_NEW_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAnswer {
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub answers: Vec<WireAnswer>,
    #[serde(default)]
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub embeddings: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub fn validate_health(h: &Health) -> Result<(), String> {
    if h.n_layers == 0 || h.attention_layer >= h.n_layers {
        return Err(format!(
            "attention_layer {} outside [0, {})",
            h.attention_layer, h.n_layers
        ));
    }
    Ok(())
}

/// One finite nonnegative score per path.
pub fn validate_scores(n_paths: usize, scores: &[f64]) -> Result<(), String> {
    if scores.len() != n_paths {
        return Err(format!("{} scores for {} paths", scores.len(), n_paths));
    }
    if let Some((i, s)) = scores
        .iter()
        .enumerate()
        .find(|(_, s)| !s.is_finite() || **s < 0.0)
    {
        return Err(format!(
            "score[{i}] = {s} is not a finite nonnegative number"
        ));
    }
    Ok(())
}

/// Strictly increasing, each within `0..n_paths`.
pub fn validate_selected(n_paths: usize, selected: &[i64]) -> Result<Vec<usize>, String> {
    let mut out = Vec::with_capacity(selected.len());
    let mut prev: Option<i64> = None;
    for (i, &idx) in selected.iter().enumerate() {
        if idx < 0 || idx as usize >= n_paths {
            return Err(format!(
                "selected[{i}] = {idx} out of range for {n_paths} paths"
            ));
        }
        if prev.is_some_and(|p| idx <= p) {
            return Err(format!("selected[{i}] = {idx} is not strictly increasing"));
        }
        prev = Some(idx);
        out.push(idx as usize);
    }
    Ok(out)
}

/// Confidences must be finite and in [0,1]; texts are whitespace-cleaned
/// and empty ones dropped.
pub fn validate_answers(answers: &[WireAnswer]) -> Result<Vec<AnswerCandidate>, String> {
    let mut out = Vec::with_capacity(answers.len());
    for (i, a) in answers.iter().enumerate() {
        if !a.confidence.is_finite() || !(0.0..=1.0).contains(&a.confidence) {
            return Err(format!(
                "answers[{i}].confidence = {} outside [0,1]",
                a.confidence
            ));
        }
        let text = clean_whitespace(&a.text);
        if text.is_empty() {
            continue;
        }
        out.push(AnswerCandidate {
            text,
            confidence: a.confidence,
        });
    }
    Ok(out)
}

pub fn validate_embeddings(n_texts: usize, embeddings: &[Vec<f64>]) -> Result<(), String> {
    if embeddings.len() != n_texts {
        return Err(format!(
            "{} embeddings for {} texts",
            embeddings.len(),
            n_texts
        ));
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err("embeddings have inconsistent dimensions".into());
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite embedding component".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_validation() {
        assert!(validate_scores(2, &[0.1, 0.9]).is_ok());
        assert!(validate_scores(2, &[0.1, 0.9, 0.3]).is_err());
        assert!(validate_scores(1, &[-0.1]).is_err());
        assert!(validate_scores(1, &[f64::INFINITY]).is_err());
    }

    #[test]
    fn selection_validation() {
        assert_eq!(validate_selected(3, &[0, 2]).unwrap(), vec![0, 2]);
        assert_eq!(validate_selected(3, &[]).unwrap(), Vec::<usize>::new());
        assert!(validate_selected(3, &[2, 1]).is_err());
        assert!(validate_selected(3, &[1, 1]).is_err());
        assert!(validate_selected(3, &[0, 7]).is_err());
        assert!(validate_selected(3, &[-1]).is_err());
    }

    #[test]
    fn answer_validation() {
        let ok = validate_answers(&[
            WireAnswer {
                text: "  University of  Northern Colorado ".into(),
                confidence: 0.97,
            },
            WireAnswer {
                text: "   ".into(),
                confidence: 0.5,
            },
        ])
        .unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(ok[0].text, "University of Northern Colorado");
        assert!(validate_answers(&[WireAnswer {
            text: "x".into(),
            confidence: 1.3
        }])
        .is_err());
        assert!(validate_answers(&[]).unwrap().is_empty());
    }

    #[test]
    fn health_layer_rule() {
        assert_eq!(super::super::attention_layer_for(32), 18);
        assert_eq!(super::super::attention_layer_for(12), 8);
        assert!(validate_health(&Health {
            model: "m".into(),
            n_layers: 4,
            attention_layer: 4
        })
        .is_err());
    }
}
