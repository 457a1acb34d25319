#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use kgrag::pipeline::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GREELEY_ID: &str = "greeley-1";
pub const GREELEY_QUESTION: &str =
    "What educational institution has a football sports team named Northern Colorado Bears is in Greeley, Colorado?";
pub const SPORTS_PATH: &str =
    "Northern Colorado Bears football → education.educational_institution.sports_teams → University of Northern Colorado";
pub const USA_PATH: &str = "Greeley → location.location.containedby → United States of America";
pub const TEMPLE_PATH: &str = "Greeley → location.location.containedby → Greeley Masonic Temple";
pub const GOLD: &str = "University of Northern Colorado";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/greeley")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

/// Copies the greeley fixtures into `dir` so runs can write next to them.
pub fn copy_greeley(dir: &Path) {
    for entry in fs::read_dir(fixture_dir()).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), dir.join(entry.file_name())).unwrap();
    }
}

/// The committed golden run config, with its paths resolved inside `dir`.
pub fn greeley_config(dir: &Path, output: &str) -> RunConfig {
    copy_greeley(dir);
    let mut cfg = RunConfig::load(dir.join("run.toml")).unwrap();
    cfg.output_dir = dir.join(output);
    cfg
}

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// A random graph plus a dataset whose gold answer is always a direct
/// neighbor of the topic entity, for runs over the heuristic mock.
pub fn write_synthetic_corpus(
    dir: &Path,
    n_entities: usize,
    n_questions: usize,
    seed: u64,
) -> RunConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = [
        "located in",
        "member of",
        "founded by",
        "plays for",
        "part of",
    ];
    let mut graph = String::new();
    let mut out_edges: Vec<Vec<usize>> = vec![Vec::new(); n_entities];
    for (h, edges) in out_edges.iter_mut().enumerate() {
        for _ in 0..3 {
            let t = rng.random_range(0..n_entities);
            if t == h {
                continue;
            }
            let r = relations[rng.random_range(0..relations.len())];
            graph.push_str(&format!("entity {h}\t{r}\tentity {t}\n"));
            edges.push(t);
        }
    }
    fs::write(dir.join("graph.tsv"), graph).unwrap();

    let mut dataset = String::new();
    for i in 0..n_questions {
        let topic = loop {
            let e = rng.random_range(0..n_entities);
            if !out_edges[e].is_empty() {
                break e;
            }
        };
        let gold = out_edges[topic][rng.random_range(0..out_edges[topic].len())];
        dataset.push_str(&format!(
            "{{\"id\": \"q{i:03}\", \"question\": \"What is related to entity {topic}?\", \"topic_entities\": [\"entity {topic}\"], \"answers\": [\"entity {gold}\"]}}\n"
        ));
    }
    fs::write(dir.join("dataset.jsonl"), dataset).unwrap();
    fs::write(dir.join("mock.json"), "{\"questions\": {}}").unwrap();

    let toml = "output_dir = \"out\"\n\
        [graph]\npath = \"graph.tsv\"\n\
        [dataset]\npath = \"dataset.jsonl\"\n\
        [retrieval]\nmode = \"builtin\"\nmax_hops = 2\nmax_paths = 40\n\
        [filter]\nk = 10\n\
        [adapter]\nmode = \"mock\"\nfixture = \"mock.json\"\n";
    fs::write(dir.join("run.toml"), toml).unwrap();
    RunConfig::load(dir.join("run.toml")).unwrap()
}
