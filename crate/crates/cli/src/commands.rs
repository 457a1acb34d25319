use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use kgrag::adapter::{AdapterServer, MockAdapter, MockFixture};
use kgrag::evaluation::{
    analyze_attention_by_gold, analyze_path_count, evaluate_run, load_predictions, path_count_csv,
    score_question, CategoryBreakdown, NoiseConfig,
};
use kgrag::filtering::CoarseMode;
use kgrag::pipeline::{
    AdapterConfig, AuditRecord, Pipeline, RetrievalConfig, RunConfig, ScorerChoice,
};
use kgrag::retrieval::load_dataset;
use kgrag::scoring::LexicalEmbedder;
use kgrag::{ReasoningPath, ScoredPath};
use serde_json::json;

use crate::{
    AnalyzeCommand, CoarseModeArg, EvalArgs, Format, NoiseArgs, Overrides, RunArgs, Scorer,
    ServeMockArgs,
};

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

impl Overrides {
    fn apply(self, cfg: &mut RunConfig) {
        let cwd = std::env::current_dir().unwrap_or_default();
        if let Some(dir) = self.output_dir {
            cfg.output_dir = cwd.join(dir);
        }
        if let Some(p) = self.parallelism {
            cfg.parallelism = p;
        }
        if let RetrievalConfig::Builtin {
            max_hops,
            max_paths,
        } = &mut cfg.retrieval
        {
            if let Some(h) = self.max_hops {
                *max_hops = h;
            }
            if let Some(p) = self.max_paths {
                *max_paths = p;
            }
        }
        if let Some(s) = self.scorer {
            cfg.scoring.scorer = match s {
                Scorer::Attention => ScorerChoice::Attention,
                Scorer::Similarity => ScorerChoice::Similarity,
                Scorer::Pagerank => ScorerChoice::Pagerank,
                Scorer::External => ScorerChoice::External,
            };
        }
        if let Some(m) = self.coarse_mode {
            cfg.filter.coarse_mode = match m {
                CoarseModeArg::TopK => CoarseMode::TopK,
                CoarseModeArg::Absolute => CoarseMode::Absolute,
            };
        }
        if let Some(k) = self.k {
            cfg.filter.k = k;
        }
        if let Some(t) = self.tau {
            cfg.filter.tau = t;
        }
        cfg.filter.coarse_enabled &= !self.no_coarse;
        cfg.filter.fine_enabled &= !self.no_fine;
        cfg.integration.enabled &= !self.no_integration;
        if let Some(t) = self.tau_g {
            cfg.integration.tau_g = t;
        }
        if let Some(t) = self.tau_l {
            cfg.integration.tau_l = t;
        }
        if let Some(url) = self.adapter_url {
            cfg.adapter = match &cfg.adapter {
                AdapterConfig::Http {
                    timeout_secs,
                    retries,
                    backoff_ms,
                    ..
                } => AdapterConfig::Http {
                    base_url: url,
                    timeout_secs: *timeout_secs,
                    retries: *retries,
                    backoff_ms: *backoff_ms,
                },
                AdapterConfig::Mock { .. } => AdapterConfig::Http {
                    base_url: url,
                    timeout_secs: 120.0,
                    retries: 2,
                    backoff_ms: 1000,
                },
            };
        }
        if self.noise.is_some() || self.noise_seed.is_some() {
            let noise = cfg.noise.get_or_insert_with(NoiseConfig::default);
            if let Some(n) = self.noise {
                noise.n_noise = n;
            }
            if let Some(s) = self.noise_seed {
                noise.seed = s;
            }
        }
    }
}

pub fn run(args: RunArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    args.overrides.apply(&mut cfg);
    let pipeline = Pipeline::prepare(cfg, args.adapter_token)?;
    let report = pipeline.run(args.resume)?;

    println!("run directory: {}", report.output_dir.display());
    println!(
        "questions: {} ({} resumed, {} failed)",
        report.n_questions,
        report.n_resumed,
        report.errors.len()
    );
    for e in &report.errors {
        eprintln!("{}: {}: {}", e.question_id, e.kind, e.message);
    }
    match &report.summary {
        Some(s) => print!("{}", s.to_table()),
        None => println!("evaluation skipped"),
    }
    Ok(if report.failed() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let summary = evaluate_run(&args.dataset, &args.predictions)?;
    match args.format {
        Format::Table => print!("{}", summary.to_table()),
        Format::Csv => print!("{}", summary.to_csv()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn read_audit(path: &Path) -> Result<Vec<AuditRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

fn categories(dataset: &Path, rag: &Path, llm_only: &Path) -> Result<String> {
    let questions = load_dataset(dataset)?;
    let rag = load_predictions(rag)?;
    let llm = load_predictions(llm_only)?;
    let rag_ids: BTreeSet<&str> = rag.iter().map(|r| r.question_id.as_str()).collect();
    let llm_ids: BTreeSet<&str> = llm.iter().map(|r| r.question_id.as_str()).collect();
    let only_rag: Vec<&str> = rag_ids.difference(&llm_ids).copied().collect();
    let only_llm: Vec<&str> = llm_ids.difference(&rag_ids).copied().collect();
    if !only_rag.is_empty() || !only_llm.is_empty() {
        bail!(
            "prediction files cover different questions; missing from llm-only: [{}]; missing from rag: [{}]",
            only_rag.join(", "),
            only_llm.join(", ")
        );
    }
    let gold: HashMap<&str, &[String]> = questions
        .iter()
        .map(|q| (q.id.as_str(), q.gold_answers.as_slice()))
        .collect();
    let unknown: Vec<&str> = rag_ids
        .iter()
        .copied()
        .filter(|id| !gold.contains_key(id))
        .collect();
    ensure!(
        unknown.is_empty(),
        "ids not in the dataset: [{}]",
        unknown.join(", ")
    );

    let llm_by_id: HashMap<&str, &[String]> = llm
        .iter()
        .map(|r| (r.question_id.as_str(), r.answers.as_slice()))
        .collect();
    let mut pairs = Vec::with_capacity(rag.len());
    for r in &rag {
        let g = gold[r.question_id.as_str()];
        let f_rag = score_question(&r.answers, g)
            .with_context(|| format!("question {}", r.question_id))?
            .f1;
        let f_llm = score_question(llm_by_id[r.question_id.as_str()], g)?.f1;
        pairs.push((f_rag, f_llm));
    }
    Ok(CategoryBreakdown::from_pairs(pairs).to_csv())
}

pub fn analyze(cmd: AnalyzeCommand) -> Result<ExitCode> {
    let out = match cmd {
        AnalyzeCommand::Categories {
            dataset,
            rag,
            llm_only,
        } => categories(&dataset, &rag, &llm_only)?,
        AnalyzeCommand::PathCount {
            audit,
            bins,
            window,
        } => {
            let records: Vec<(usize, f64)> = read_audit(&audit)?
                .iter()
                .filter_map(|r| r.f1.map(|f| (r.n_paths_retrieved, f)))
                .collect();
            ensure!(
                !records.is_empty(),
                "{} has no scored questions",
                audit.display()
            );
            path_count_csv(&analyze_path_count(&records, bins, window)?)
        }
        AnalyzeCommand::Attention { audit } => {
            let mut scored = Vec::new();
            for rec in read_audit(&audit)? {
                for p in rec.paths {
                    let path = ReasoningPath::parse_verbalized(&p.path)?;
                    scored.push((
                        ScoredPath {
                            path,
                            score: p.score,
                            scorer: rec.scorer,
                        },
                        p.contains_gold,
                    ));
                }
            }
            analyze_attention_by_gold(&scored).to_csv()
        }
    };
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

pub fn noise(args: NoiseArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    let noise = cfg.noise.get_or_insert_with(NoiseConfig::default);
    if let Some(n) = args.n_noise {
        noise.n_noise = n;
    }
    if let Some(s) = args.seed {
        noise.seed = s;
    }
    let pipeline = Pipeline::prepare(cfg, None)?;
    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(file);
    let mut n_paths = 0;
    for q in pipeline.dataset() {
        let result = pipeline.retrieve(q)?;
        for p in &result.paths {
            let mut row = json!({
                "question_id": q.id,
                "entities": p.path.entities(),
                "relations": p.path.relations(),
                "noise": p.noise,
            });
            if let Some(s) = p.external_score {
                row["score"] = json!(s);
            }
            writeln!(w, "{row}")?;
            n_paths += 1;
        }
    }
    w.flush()?;
    eprintln!("wrote {n_paths} paths to {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn serve_mock(args: ServeMockArgs) -> Result<ExitCode> {
    let fixture = MockFixture::load(&args.fixture)?;
    let mut mock = MockAdapter::new(fixture)?;
    if let Some(ds) = &args.dataset {
        mock = mock.with_questions(&load_dataset(ds)?);
    }
    let handle = AdapterServer::new(Arc::new(mock))
        .with_embedder(Arc::new(LexicalEmbedder))
        .with_auth_token(args.auth_token)
        .start(&args.addr.to_string())
        .with_context(|| format!("binding {}", args.addr))?;
    println!("listening on {}", handle.base_url());
    std::io::stdout().flush()?;
    handle.join();
    Ok(ExitCode::SUCCESS)
}
