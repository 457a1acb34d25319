use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command as StdCommand, Stdio};

use assert_cmd::Command;
use predicates::prelude::*;

const GOLD: &str = "University of Northern Colorado";

fn kgrag() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kgrag"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/greeley")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(fixtures()).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    dir
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn run_golden(dir: &Path, out: &str, extra: &[&str]) -> assert_cmd::assert::Assert {
    kgrag()
        .current_dir(dir)
        .env_remove("KGRAG_ADAPTER_TOKEN")
        .args(["run", "run.toml", "--output-dir", out])
        .args(extra)
        .assert()
}

/// Kills the child on drop.
struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve_mock(dir: &Path, token: Option<&str>) -> Server {
    let mut cmd = StdCommand::new(env!("CARGO_BIN_EXE_kgrag"));
    cmd.current_dir(dir)
        .args([
            "serve-mock",
            "mock_fixture.json",
            "--dataset",
            "dataset.jsonl",
            "--addr",
            "127.0.0.1:0",
        ])
        .stdout(Stdio::piped())
        .env_remove("KGRAG_ADAPTER_TOKEN");
    if let Some(t) = token {
        cmd.env("KGRAG_ADAPTER_TOKEN", t);
    }
    let mut child = cmd.spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .expect("banner")
        .to_owned();
    Server(child, url)
}

#[test]
fn run_writes_golden_outputs() {
    let dir = workspace();
    run_golden(dir.path(), "out", &[])
        .success()
        .stdout(predicate::str::contains("100.00"));
    let out = dir.path().join("out");
    assert!(read(out.join("predictions.jsonl")).contains(GOLD));
    assert_eq!(
        read(out.join("prompts/greeley-1.txt")),
        read(dir.path().join("golden_prompt.txt"))
    );
    assert!(out.join("predictions_llm_only.jsonl").exists());
}

#[test]
fn flags_override_config() {
    let dir = workspace();
    run_golden(
        dir.path(),
        "ablate",
        &[
            "--no-integration",
            "--no-coarse",
            "--no-fine",
            "--parallelism",
            "2",
        ],
    )
    .success();
    let out = dir.path().join("ablate");
    assert!(!out.join("predictions_llm_only.jsonl").exists());
    let snapshot = read(out.join("config.toml"));
    assert!(snapshot.contains("parallelism = 2"));
    assert!(snapshot.contains("coarse_enabled = false"));
    assert_ne!(
        read(out.join("prompts/greeley-1.txt")),
        read(dir.path().join("golden_prompt.txt"))
    );
}

#[test]
fn invalid_config_fails_before_work() {
    let dir = workspace();
    kgrag()
        .current_dir(dir.path())
        .args(["run", "run.toml", "--output-dir", "bad", "--k", "0"])
        .assert()
        .code(2)
        .stderr(predicate::str::contains("k >= 1"));
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn eval_reports_scores_and_missing_files() {
    let dir = workspace();
    let preds = dir.path().join("identity.jsonl");
    fs::write(
        &preds,
        format!("{{\"question_id\":\"greeley-1\",\"answers\":[\"{GOLD}\"]}}\n"),
    )
    .unwrap();
    kgrag()
        .current_dir(dir.path())
        .args([
            "eval",
            "--dataset",
            "dataset.jsonl",
            "--predictions",
            "identity.jsonl",
            "--format",
            "csv",
        ])
        .assert()
        .success()
        .stdout("questions,missing,hit,f1\n1,0,100.00,100.00\n");
    kgrag()
        .current_dir(dir.path())
        .args([
            "eval",
            "--dataset",
            "dataset.jsonl",
            "--predictions",
            "nope.jsonl",
        ])
        .assert()
        .failure()
        .stderr(predicate::str::contains("nope.jsonl"));
}

#[test]
fn analyze_subcommands() {
    let dir = workspace();
    run_golden(dir.path(), "out", &[]).success();

    let out = kgrag()
        .current_dir(dir.path())
        .args(["analyze", "categories", "--dataset", "dataset.jsonl"])
        .args([
            "--rag",
            "out/predictions.jsonl",
            "--llm-only",
            "out/predictions_llm_only.jsonl",
        ])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let csv = String::from_utf8(out).unwrap();
    assert!(csv.starts_with("category,count,percent\n"));
    assert!(csv.contains("B,1,100.00"), "{csv}");
    let total: f64 = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 100.0).abs() <= 0.01);

    fs::write(
        dir.path().join("other.jsonl"),
        "{\"question_id\":\"zzz\",\"answers\":[]}\n",
    )
    .unwrap();
    kgrag()
        .current_dir(dir.path())
        .args(["analyze", "categories", "--dataset", "dataset.jsonl"])
        .args([
            "--rag",
            "out/predictions.jsonl",
            "--llm-only",
            "other.jsonl",
        ])
        .assert()
        .failure()
        .stderr(predicate::str::contains("greeley-1").and(predicate::str::contains("zzz")));

    let out = kgrag()
        .current_dir(dir.path())
        .args(["analyze", "attention", "out/audit.jsonl"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let csv = String::from_utf8(out).unwrap();
    let mean = |group: &str| -> f64 {
        let line = csv
            .lines()
            .find(|l| l.starts_with(&format!("{group},")))
            .unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert!(mean("gold") > mean("nongold"), "{csv}");

    kgrag()
        .current_dir(dir.path())
        .args([
            "analyze",
            "path-count",
            "out/audit.jsonl",
            "--bins",
            "2",
            "--window",
            "1",
        ])
        .assert()
        .success()
        .stdout(predicate::str::starts_with(
            "bin_center,mean_f1,smoothed_f1,n\n",
        ));
}

#[test]
fn noise_writes_ingestable_paths() {
    let dir = workspace();
    kgrag()
        .current_dir(dir.path())
        .args([
            "noise",
            "run.toml",
            "--out",
            "noisy.jsonl",
            "--n-noise",
            "30",
            "--seed",
            "5",
        ])
        .assert()
        .success();
    let text = read(dir.path().join("noisy.jsonl"));
    let rows: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 33);
    assert_eq!(rows.iter().filter(|r| r["noise"] == true).count(), 30);

    kgrag()
        .current_dir(dir.path())
        .args([
            "noise",
            "run.toml",
            "--out",
            "again.jsonl",
            "--n-noise",
            "30",
            "--seed",
            "5",
        ])
        .assert()
        .success();
    assert_eq!(text, read(dir.path().join("again.jsonl")));

    let cfg = read(dir.path().join("run.toml")).replace(
        "mode = \"builtin\"\nmax_hops = 1\nmax_paths = 100",
        "mode = \"ingest\"\npath = \"noisy.jsonl\"",
    );
    fs::write(dir.path().join("ingest.toml"), cfg).unwrap();
    kgrag()
        .current_dir(dir.path())
        .args(["run", "ingest.toml", "--output-dir", "noisy-run"])
        .assert()
        .success();
    assert!(read(dir.path().join("noisy-run/predictions.jsonl")).contains(GOLD));
}

#[test]
fn served_mock_drives_an_http_run() {
    let dir = workspace();
    run_golden(dir.path(), "mock", &[]).success();
    let server = serve_mock(dir.path(), None);
    run_golden(dir.path(), "http", &["--adapter-url", &server.1]).success();
    for file in [
        "predictions.jsonl",
        "audit.jsonl",
        "prompts/greeley-1.txt",
        "summary.csv",
    ] {
        assert_eq!(
            read(dir.path().join("mock").join(file)),
            read(dir.path().join("http").join(file)),
            "{file}"
        );
    }
}

#[test]
fn adapter_token_comes_from_the_environment() {
    let dir = workspace();
    let server = serve_mock(dir.path(), Some("t0ken"));
    kgrag()
        .current_dir(dir.path())
        .env("KGRAG_ADAPTER_TOKEN", "t0ken")
        .args([
            "run",
            "run.toml",
            "--output-dir",
            "ok",
            "--adapter-url",
            &server.1,
        ])
        .assert()
        .success();
    run_golden(dir.path(), "denied", &["--adapter-url", &server.1])
        .code(1)
        .stderr(predicate::str::contains("unavailable"));
}

#[test]
fn unreachable_adapter_exits_nonzero() {
    let dir = workspace();
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cfg = read(dir.path().join("run.toml")).replace(
        "mode = \"mock\"\nfixture = \"mock_fixture.json\"",
        &format!("mode = \"http\"\nbase_url = \"http://127.0.0.1:{port}/\"\nretries = 0\nbackoff_ms = 1\ntimeout_secs = 2"),
    );
    fs::write(dir.path().join("http.toml"), cfg).unwrap();
    kgrag()
        .current_dir(dir.path())
        .env_remove("KGRAG_ADAPTER_TOKEN")
        .args(["run", "http.toml", "--output-dir", "down"])
        .assert()
        .code(1)
        .stderr(predicate::str::contains("scorer_unavailable"));
    assert!(dir.path().join("down/errors.jsonl").exists());
}
