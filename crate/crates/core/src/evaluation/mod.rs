//! Hit / F1 metrics, run-level evaluation, and the analysis helpers used
//! to compare runs with and without retrieval.

mod analysis;
mod noise;

pub use analysis::{
    analyze_attention_by_gold, analyze_path_count, path_contains_gold, path_count_csv,
    AttentionByGold, PathCountBin,
};
pub use noise::{inject_noise, NoiseConfig};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{load_dataset, Question};
use crate::text::normalize_answer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hit: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question_id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub hit: u8,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    #[serde(default)]
    pub n_paths_retrieved: usize,
}

fn normalized_set<S: AsRef<str>>(items: &[S]) -> HashSet<String> {
    items
        .iter()
        .map(|s| normalize_answer(s.as_ref()))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Set-based precision/recall/F1 after normalization and deduplication.
pub fn score_question<S: AsRef<str>, T: AsRef<str>>(
    predicted: &[S],
    gold: &[T],
) -> Result<Metrics> {
    let gold = normalized_set(gold);
    if gold.is_empty() {
        return Err(Error::EmptyGold(String::new()));
    }
    let predicted = normalized_set(predicted);
    let overlap = predicted.intersection(&gold).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        overlap / predicted.len() as f64
    };
    let recall = overlap / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        hit: u8::from(overlap > 0.0),
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Both runs equally good (and not both zero).
    A,
    /// Retrieval-augmented run is better.
    B,
    /// Standalone run is better.
    C,
    /// Both fail.
    D,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::A => "A",
            Category::B => "B",
            Category::C => "C",
            Category::D => "D",
        };
        f.write_str(s)
    }
}

pub fn categorize(f1_rag: f64, f1_llm: f64) -> Category {
    if f1_rag == 0.0 && f1_llm == 0.0 {
        Category::D
    } else if f1_rag > f1_llm {
        Category::B
    } else if f1_llm > f1_rag {
        Category::C
    } else {
        Category::A
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryBreakdown {
    pub counts: BTreeMap<Category, usize>,
    pub percentages: BTreeMap<Category, f64>,
    pub total: usize,
}

impl CategoryBreakdown {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut counts: BTreeMap<Category, usize> =
            [Category::A, Category::B, Category::C, Category::D]
                .into_iter()
                .map(|c| (c, 0))
                .collect();
        let mut total = 0;
        for (r, l) in pairs {
            *counts
                .get_mut(&categorize(r, l))
                .expect("all categories present") += 1;
            total += 1;
        }
        let percentages = counts
            .iter()
            .map(|(&c, &n)| {
                (
                    c,
                    if total == 0 {
                        0.0
                    } else {
                        100.0 * n as f64 / total as f64
                    },
                )
            })
            .collect();
        Self {
            counts,
            percentages,
            total,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,percent\n");
        for (c, n) in &self.counts {
            out.push_str(&format!("{c},{n},{:.2}\n", self.percentages[c]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub question_id: String,
    pub answers: Vec<String>,
}

/// Reads a predictions JSONL file; a repeated question id is an error.
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PredictionRow =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if !seen.insert(row.question_id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_owned(),
                id: row.question_id,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Macro-averaged Hit, as a percentage.
    pub hit: f64,
    /// Macro-averaged F1, as a percentage.
    pub f1: f64,
    pub n_questions: usize,
    pub n_missing: usize,
    pub records: Vec<EvalRecord>,
}

impl RunSummary {
    pub fn to_csv(&self) -> String {
        format!(
            "questions,missing,hit,f1\n{},{},{:.2},{:.2}\n",
            self.n_questions, self.n_missing, self.hit, self.f1
        )
    }

    pub fn to_table(&self) -> String {
        format!(
            "questions  missing  Hit     F1\n{:<10} {:<8} {:<7.2} {:.2}\n",
            self.n_questions, self.n_missing, self.hit, self.f1
        )
    }
}

/// Scores predictions against the dataset. Questions without a prediction
/// count as empty predictions; predictions for unknown ids are ignored.
pub fn evaluate_predictions(
    dataset: &[Question],
    predictions: &[PredictionRow],
) -> Result<RunSummary> {
    let mut by_id: HashMap<&str, &PredictionRow> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.question_id.as_str(), p).is_some() {
            return Err(Error::DuplicateId {
                path: "<predictions>".into(),
                id: p.question_id.clone(),
            });
        }
    }
    let mut records = Vec::with_capacity(dataset.len());
    let mut n_missing = 0;
    for q in dataset {
        let predicted = match by_id.get(q.id.as_str()) {
            Some(p) => p.answers.clone(),
            None => {
                n_missing += 1;
                Vec::new()
            }
        };
        let m = score_question(&predicted, &q.gold_answers)
            .map_err(|_| Error::EmptyGold(q.id.clone()))?;
        records.push(EvalRecord {
            question_id: q.id.clone(),
            predicted,
            gold: q.gold_answers.clone(),
            hit: m.hit,
            f1: m.f1,
            precision: m.precision,
            recall: m.recall,
            n_paths_retrieved: 0,
        });
    }
    let n = records.len().max(1) as f64;
    let hit = 100.0 * records.iter().map(|r| r.hit as f64).sum::<f64>() / n;
    let f1 = 100.0 * records.iter().map(|r| r.f1).sum::<f64>() / n;
    Ok(RunSummary {
        hit,
        f1,
        n_questions: records.len(),
        n_missing,
        records,
    })
}

pub fn evaluate_run(
    dataset: impl AsRef<Path>,
    predictions: impl AsRef<Path>,
) -> Result<RunSummary> {
    let ds = load_dataset(dataset)?;
    let preds = load_predictions(predictions)?;
    evaluate_predictions(&ds, &preds)
}
