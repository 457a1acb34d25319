//! End-to-end runs: retrieve, optionally add noise, score, filter, prompt,
//! answer, and write a run directory.
//!
//! Questions are processed by a bounded worker pool. Finished questions are
//! appended to a progress file as they arrive so an interrupted run can be
//! resumed; the final files are always written in dataset order.

mod config;

pub use config::{
    AdapterConfig, DatasetConfig, EmbedderChoice, GraphConfig, IntegrationSection, PromptConfig,
    RetrievalConfig, RunConfig, ScorerChoice, ScorerFallback, ScoringConfig,
};

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterError, Embedder, HttpAdapter, MockAdapter, MockFixture};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate_predictions, inject_noise, path_contains_gold, score_question, PredictionRow,
    RunSummary,
};
use crate::filtering::{run_filter_pipeline, FilterOutcome};
use crate::integration::{integrate, AnswerCandidate, AnswerOrigin, AnswerSet, IntegrationRecord};
use crate::kg::{load_graph, KnowledgeGraph};
use crate::prompting::{build_prompt, PromptBundle};
use crate::retrieval::{
    ingest_paths, load_dataset, retrieve_paths, Question, ReasoningPath, RetrievalResult,
    RetrievalSource,
};
use crate::scoring::{
    score_attention, score_external, score_pagerank, score_similarity, LexicalEmbedder, ScoredPath,
    ScorerKind,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const GRAPHRAG_PREDICTIONS_FILE: &str = "predictions_graphrag.jsonl";
pub const LLM_ONLY_PREDICTIONS_FILE: &str = "predictions_llm_only.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const ERRORS_FILE: &str = "errors.jsonl";
pub const PROMPTS_DIR: &str = "prompts";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const SUMMARY_CSV: &str = "summary.csv";
const PROGRESS_FILE: &str = "progress.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPath {
    pub path: String,
    pub score: f64,
    pub noise: bool,
    pub contains_gold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFilter {
    pub coarse: Vec<String>,
    #[serde(rename = "final")]
    pub final_paths: Vec<String>,
    pub residual: Vec<String>,
    pub judge_raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_fallback: Option<String>,
}

impl From<&FilterOutcome> for AuditFilter {
    fn from(o: &FilterOutcome) -> Self {
        Self {
            coarse: o.coarse.iter().map(|p| p.path.verbalize()).collect(),
            final_paths: o.final_texts(),
            residual: o.residual_texts(),
            judge_raw: o.judge_raw.clone(),
            judge_fallback: o.judge_fallback.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub high_priority: usize,
    pub additional: usize,
    pub truncated: bool,
    pub chars: usize,
}

/// One line of `audit.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub question_id: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    pub retriever: String,
    pub source: RetrievalSource,
    pub no_anchor: bool,
    pub n_paths_retrieved: usize,
    pub n_noise: usize,
    pub scorer: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer_fallback: Option<String>,
    /// Scored paths in retrieval order.
    pub paths: Vec<AuditPath>,
    pub filter: AuditFilter,
    pub prompt: PromptStats,
    /// Absent when integration is disabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integration: Option<IntegrationRecord>,
    pub answers: Vec<AnswerCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

/// One line of `timings.jsonl`, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub question_id: String,
    pub retrieve_ms: f64,
    pub score_ms: f64,
    pub filter_ms: f64,
    pub answer_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphrag_call_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_only_call_ms: Option<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutput {
    pub question_id: String,
    pub answers: Vec<String>,
    pub graphrag_answers: Option<Vec<String>>,
    pub llm_only_answers: Option<Vec<String>>,
    pub prompt: String,
    pub audit: AuditRecord,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionError {
    pub question_id: String,
    pub kind: String,
    pub message: String,
    /// The adapter was unreachable or broke the protocol.
    pub fatal: bool,
}

impl QuestionError {
    fn new(question_id: &str, e: &Error) -> Self {
        Self {
            question_id: question_id.to_owned(),
            kind: e.kind().to_owned(),
            message: e.to_string(),
            fatal: e.is_unavailable() || matches!(e, Error::Protocol(_)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub n_questions: usize,
    pub n_completed: usize,
    pub n_resumed: usize,
    pub errors: Vec<QuestionError>,
    pub summary: Option<RunSummary>,
}

impl RunReport {
    /// True when a question hit an unavailable or misbehaving adapter.
    pub fn failed(&self) -> bool {
        self.errors.iter().any(|e| e.fatal)
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn answer_error(e: AdapterError) -> Error {
    if e.is_protocol_violation() {
        Error::Protocol(e)
    } else {
        Error::AnswerUnavailable(e)
    }
}

/// File name for a question's prompt; characters outside `[A-Za-z0-9._-]`
/// become `_`.
pub fn prompt_file_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.txt")
}

/// A validated config with its graph, dataset, and adapter loaded.
pub struct Pipeline {
    cfg: RunConfig,
    graph: KnowledgeGraph,
    dataset: Vec<Question>,
    ingested: HashMap<String, RetrievalResult>,
    adapter: Arc<dyn Adapter>,
    embedder: Arc<dyn Embedder>,
}

impl Pipeline {
    /// Validates the config and loads every input. Nothing is written.
    pub fn prepare(cfg: RunConfig, auth_token: Option<String>) -> Result<Self> {
        cfg.validate()?;
        let graph = load_graph(&cfg.graph.path, cfg.graph.format)?;
        tracing::info!(report = %graph.report(), "graph loaded");
        let dataset = load_dataset(&cfg.dataset.path)?;
        let ingested = match &cfg.retrieval {
            RetrievalConfig::Ingest { path } => ingest_paths(path)?
                .into_iter()
                .map(|r| (r.question_id.clone(), r))
                .collect(),
            RetrievalConfig::Builtin { .. } => HashMap::new(),
        };
        let (adapter, http): (Arc<dyn Adapter>, Option<HttpAdapter>) = match &cfg.adapter {
            AdapterConfig::Mock { fixture } => {
                let mock = MockAdapter::new(MockFixture::load(fixture)?)?.with_questions(&dataset);
                (Arc::new(mock), None)
            }
            AdapterConfig::Http { .. } => {
                let endpoint = cfg.adapter.endpoint(auth_token).expect("http mode");
                let client =
                    HttpAdapter::new(endpoint).map_err(|e| Error::Config(e.to_string()))?;
                (Arc::new(client.clone()), Some(client))
            }
        };
        let embedder: Arc<dyn Embedder> = match (cfg.scoring.embedder, http) {
            (EmbedderChoice::Adapter, Some(client)) => Arc::new(client),
            _ => Arc::new(LexicalEmbedder),
        };
        Ok(Self {
            cfg,
            graph,
            dataset,
            ingested,
            adapter,
            embedder,
        })
    }

    /// Replaces the adapter built from the config.
    pub fn with_adapter(mut self, adapter: Arc<dyn Adapter>) -> Self {
        self.adapter = adapter;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dataset(&self) -> &[Question] {
        &self.dataset
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn retrieve(&self, q: &Question) -> Result<RetrievalResult> {
        let result = match &self.cfg.retrieval {
            RetrievalConfig::Builtin {
                max_hops,
                max_paths,
            } => retrieve_paths(&self.graph, q, *max_hops, *max_paths)?,
            RetrievalConfig::Ingest { path } => {
                self.ingested.get(&q.id).cloned().unwrap_or_else(|| {
                    let name = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("ingested");
                    RetrievalResult::empty(&q.id, RetrievalSource::Ingested, name)
                })
            }
        };
        match &self.cfg.noise {
            Some(noise) => inject_noise(&self.graph, &result, &q.gold_answers, noise),
            None => Ok(result),
        }
    }

    fn score(
        &self,
        q: &Question,
        retrieved: &RetrievalResult,
    ) -> Result<(Vec<ScoredPath>, Option<String>)> {
        let paths: Vec<ReasoningPath> = retrieved.paths.iter().map(|p| p.path.clone()).collect();
        let scoring = &self.cfg.scoring;
        match scoring.scorer {
            ScorerChoice::Attention => match score_attention(self.adapter.as_ref(), q, &paths) {
                Err(Error::ScorerUnavailable(e))
                    if scoring.fallback == ScorerFallback::Similarity =>
                {
                    tracing::warn!(question = %q.id, error = %e, "attention scorer unavailable, using similarity");
                    Ok((
                        score_similarity(self.embedder.as_ref(), q, &paths)?,
                        Some(e.to_string()),
                    ))
                }
                other => Ok((other?, None)),
            },
            ScorerChoice::Similarity => {
                Ok((score_similarity(self.embedder.as_ref(), q, &paths)?, None))
            }
            ScorerChoice::Pagerank => Ok((
                score_pagerank(&self.graph, q, &paths, &scoring.pagerank)?,
                None,
            )),
            ScorerChoice::External => Ok((score_external(&retrieved.paths), None)),
        }
    }

    fn scorer_kind(&self, scored: &[ScoredPath]) -> ScorerKind {
        scored
            .first()
            .map(|p| p.scorer)
            .unwrap_or(match self.cfg.scoring.scorer {
                ScorerChoice::Attention => ScorerKind::Attention,
                ScorerChoice::Similarity => ScorerKind::Similarity,
                ScorerChoice::Pagerank => ScorerKind::Pagerank,
                ScorerChoice::External => ScorerKind::External,
            })
    }

    /// Runs every stage for one question.
    pub fn process(&self, q: &Question) -> Result<QuestionOutput> {
        let start = Instant::now();
        let retrieved = self.retrieve(q)?;
        let retrieve_ms = ms_since(start);

        let t = Instant::now();
        let (scored, scorer_fallback) = self.score(q, &retrieved)?;
        let score_ms = ms_since(t);

        let t = Instant::now();
        let outcome = run_filter_pipeline(self.adapter.as_ref(), q, &scored, &self.cfg.filter)?;
        let filter_ms = ms_since(t);

        let prompt = build_prompt(q, &outcome, self.cfg.prompt.max_chars);

        let t = Instant::now();
        let (integration, final_set, call_ms) = self.answer(q, &prompt)?;
        let answer_ms = ms_since(t);

        let answers = final_set.texts();
        let (hit, f1) = match score_question(&answers, &q.gold_answers) {
            Ok(m) => (Some(m.hit), Some(m.f1)),
            Err(_) => (None, None),
        };
        let (graphrag_answers, llm_only_answers) = match &integration {
            Some(rec) => (
                rec.raw_graphrag.as_ref().map(AnswerSet::texts),
                rec.raw_llm_only.as_ref().map(AnswerSet::texts),
            ),
            None => (Some(answers.clone()), None),
        };
        let paths = scored
            .iter()
            .zip(&retrieved.paths)
            .map(|(s, r)| AuditPath {
                path: s.path.verbalize(),
                score: s.score,
                noise: r.noise,
                contains_gold: path_contains_gold(&s.path, &q.gold_answers),
            })
            .collect();
        let audit = AuditRecord {
            question_id: q.id.clone(),
            question: q.text.clone(),
            gold_answers: q.gold_answers.clone(),
            retriever: retrieved.retriever_name.clone(),
            source: retrieved.source,
            no_anchor: retrieved.no_anchor,
            n_paths_retrieved: retrieved.paths.len(),
            n_noise: retrieved.noise_count(),
            scorer: self.scorer_kind(&scored),
            scorer_fallback,
            paths,
            filter: AuditFilter::from(&outcome),
            prompt: PromptStats {
                high_priority: prompt.high_priority_count,
                additional: prompt.additional_count,
                truncated: prompt.truncated,
                chars: prompt.text.chars().count(),
            },
            integration,
            answers: final_set.answers.clone(),
            hit,
            f1,
        };
        let timing = Timing {
            question_id: q.id.clone(),
            retrieve_ms,
            score_ms,
            filter_ms,
            answer_ms,
            graphrag_call_ms: call_ms.0,
            llm_only_call_ms: call_ms.1,
            total_ms: ms_since(start),
        };
        Ok(QuestionOutput {
            question_id: q.id.clone(),
            answers,
            graphrag_answers,
            llm_only_answers,
            prompt: prompt.text,
            audit,
            timing,
        })
    }

    #[allow(clippy::type_complexity)]
    fn answer(
        &self,
        q: &Question,
        prompt: &PromptBundle,
    ) -> Result<(
        Option<IntegrationRecord>,
        AnswerSet,
        (Option<f64>, Option<f64>),
    )> {
        let max_new_tokens = self.cfg.prompt.max_new_tokens;
        if self.cfg.integration.enabled {
            let rec = integrate(
                self.adapter.as_ref(),
                q,
                prompt,
                &self.cfg.integration.thresholds(),
                max_new_tokens,
            )?;
            let set = rec.final_answers.clone();
            let ms = rec.latency_ms;
            Ok((Some(rec), set, ms))
        } else {
            let t = Instant::now();
            let reply = self
                .adapter
                .answer(&prompt.text, max_new_tokens)
                .map_err(answer_error)?;
            let ms = ms_since(t);
            Ok((
                None,
                AnswerSet::new(reply.answers, AnswerOrigin::Graphrag),
                (Some(ms), None),
            ))
        }
    }

    /// Processes every question not already finished and writes the run
    /// directory. With `resume`, finished questions recorded by an earlier
    /// run with the same config are reused.
    pub fn run(&self, resume: bool) -> Result<RunReport> {
        let out = &self.cfg.output_dir;
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let snapshot = self.cfg.to_toml();
        let progress_path = out.join(PROGRESS_FILE);

        let mut done: HashMap<String, QuestionOutput> = HashMap::new();
        if resume && progress_path.exists() {
            let previous = fs::read_to_string(out.join(CONFIG_FILE)).unwrap_or_default();
            if previous != snapshot {
                return Err(Error::Config(format!(
                    "cannot resume in {}: config differs from the earlier run",
                    out.display()
                )));
            }
            done = read_progress(&progress_path)?;
        } else if progress_path.exists() {
            fs::remove_file(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
        }
        let n_resumed = done.len();
        write_file(&out.join(CONFIG_FILE), &snapshot)?;

        let pending: Vec<&Question> = self
            .dataset
            .iter()
            .filter(|q| !done.contains_key(&q.id))
            .collect();
        tracing::info!(pending = pending.len(), resumed = n_resumed, "starting run");

        let progress = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&progress_path)
            .map_err(|e| Error::io(&progress_path, e))?;
        let mut progress = BufWriter::new(progress);
        let mut failures: HashMap<String, QuestionError> = HashMap::new();
        let mut sink_error: Option<Error> = None;

        let next = AtomicUsize::new(0);
        let workers = self.cfg.parallelism.min(pending.len()).max(1);
        std::thread::scope(|s| {
            let (tx, rx) = mpsc::channel();
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, pending) = (&next, &pending);
                s.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(q) = pending.get(i) else { break };
                    if tx.send((q.id.clone(), self.process(q))).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for (id, result) in rx {
                match result {
                    Ok(output) => {
                        if sink_error.is_none() {
                            let line = serde_json::to_string(&output).expect("output serializes");
                            if let Err(e) =
                                writeln!(progress, "{line}").and_then(|_| progress.flush())
                            {
                                sink_error = Some(Error::io(&progress_path, e));
                            }
                        }
                        done.insert(id, output);
                    }
                    Err(e) => {
                        tracing::warn!(question = %id, error = %e, "question failed");
                        failures.insert(id.clone(), QuestionError::new(&id, &e));
                    }
                }
            }
        });
        drop(progress);
        if let Some(e) = sink_error {
            return Err(e);
        }

        let errors: Vec<QuestionError> = self
            .dataset
            .iter()
            .filter_map(|q| failures.remove(&q.id))
            .collect();
        let summary = self.write_outputs(&done, &errors)?;
        if errors.is_empty() {
            fs::remove_file(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
        }
        Ok(RunReport {
            output_dir: out.clone(),
            n_questions: self.dataset.len(),
            n_completed: done.len(),
            n_resumed,
            errors,
            summary,
        })
    }

    fn write_outputs(
        &self,
        done: &HashMap<String, QuestionOutput>,
        errors: &[QuestionError],
    ) -> Result<Option<RunSummary>> {
        let out = &self.cfg.output_dir;
        let ordered: Vec<&QuestionOutput> = self
            .dataset
            .iter()
            .filter_map(|q| done.get(&q.id))
            .collect();

        let predictions: Vec<PredictionRow> = ordered
            .iter()
            .map(|o| PredictionRow {
                question_id: o.question_id.clone(),
                answers: o.answers.clone(),
            })
            .collect();
        write_jsonl(&out.join(PREDICTIONS_FILE), &predictions)?;
        let side = |pick: fn(&QuestionOutput) -> Option<&Vec<String>>| -> Vec<PredictionRow> {
            ordered
                .iter()
                .filter_map(|o| {
                    pick(o).map(|answers| PredictionRow {
                        question_id: o.question_id.clone(),
                        answers: answers.clone(),
                    })
                })
                .collect()
        };
        write_jsonl(
            &out.join(GRAPHRAG_PREDICTIONS_FILE),
            &side(|o| o.graphrag_answers.as_ref()),
        )?;
        if self.cfg.integration.enabled {
            write_jsonl(
                &out.join(LLM_ONLY_PREDICTIONS_FILE),
                &side(|o| o.llm_only_answers.as_ref()),
            )?;
        }
        write_jsonl(
            &out.join(AUDIT_FILE),
            &ordered.iter().map(|o| &o.audit).collect::<Vec<_>>(),
        )?;
        write_jsonl(
            &out.join(TIMINGS_FILE),
            &ordered.iter().map(|o| &o.timing).collect::<Vec<_>>(),
        )?;
        write_jsonl(&out.join(ERRORS_FILE), errors)?;

        let prompts = out.join(PROMPTS_DIR);
        if prompts.exists() {
            fs::remove_dir_all(&prompts).map_err(|e| Error::io(&prompts, e))?;
        }
        fs::create_dir_all(&prompts).map_err(|e| Error::io(&prompts, e))?;
        for o in &ordered {
            write_file(&prompts.join(prompt_file_name(&o.question_id)), &o.prompt)?;
        }

        let gradable = self.dataset.iter().all(|q| !q.gold_answers.is_empty());
        if !gradable {
            write_file(
                &out.join(SUMMARY_TXT),
                "evaluation skipped: some questions have no gold answers\n",
            )?;
            write_file(&out.join(SUMMARY_CSV), "questions,missing,hit,f1\n")?;
            return Ok(None);
        }
        let summary = evaluate_predictions(&self.dataset, &predictions)?;
        write_file(&out.join(SUMMARY_TXT), &summary.to_table())?;
        write_file(&out.join(SUMMARY_CSV), &summary.to_csv())?;
        Ok(Some(summary))
    }
}

fn read_progress(path: &Path) -> Result<HashMap<String, QuestionOutput>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut done = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        // A torn last line from an interrupted run is simply redone.
        if let Ok(o) = serde_json::from_str::<QuestionOutput>(&line) {
            done.insert(o.question_id.clone(), o);
        }
    }
    Ok(done)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("row serializes"));
        text.push('\n');
    }
    write_file(path, &text)
}

/// Loads, validates, and runs a config in one call.
pub fn run_config(cfg: RunConfig, auth_token: Option<String>, resume: bool) -> Result<RunReport> {
    Pipeline::prepare(cfg, auth_token)?.run(resume)
}
