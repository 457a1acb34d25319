//! Candidate path retrieval: built-in bounded breadth-first search over the
//! graph, or ingestion of paths produced by an external retriever.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

/// Separator used between path elements when a path is rendered as text.
pub const ARROW: &str = " → ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "question")]
    pub text: String,
    #[serde(default)]
    pub topic_entities: Vec<String>,
    #[serde(rename = "answers", default)]
    pub gold_answers: Vec<String>,
}

/// Reads a dataset JSONL file. Ids must be non-empty and unique.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Question>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        if q.id.is_empty() {
            return Err(Error::parse(path, idx + 1, "empty question id"));
        }
        if !seen.insert(q.id.clone()) {
            return Err(Error::DuplicateId {
                path: path.to_owned(),
                id: q.id,
            });
        }
        out.push(q);
    }
    Ok(out)
}

/// An entity-relation chain `e0 -r0-> e1 -r1-> ... en`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningPath {
    entities: Vec<String>,
    relations: Vec<String>,
}

impl ReasoningPath {
    pub fn new(entities: Vec<String>, relations: Vec<String>) -> Result<Self> {
        if entities.len() != relations.len() + 1 {
            return Err(Error::InvalidPath(format!(
                "{} entities with {} relations",
                entities.len(),
                relations.len()
            )));
        }
        Ok(Self {
            entities,
            relations,
        })
    }

    pub fn entity(name: impl Into<String>) -> Self {
        Self {
            entities: vec![name.into()],
            relations: Vec::new(),
        }
    }

    pub fn triple(
        head: impl Into<String>,
        relation: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Self {
            entities: vec![head.into(), tail.into()],
            relations: vec![relation.into()],
        }
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn hops(&self) -> usize {
        self.relations.len()
    }

    pub fn tail(&self) -> &str {
        self.entities.last().expect("path has at least one entity")
    }

    /// `A → r → B`; a bare entity renders as itself.
    pub fn verbalize(&self) -> String {
        let mut out =
            String::with_capacity(self.entities.iter().map(String::len).sum::<usize>() + 32);
        out.push_str(&self.entities[0]);
        for (rel, ent) in self.relations.iter().zip(&self.entities[1..]) {
            out.push_str(ARROW);
            out.push_str(rel);
            out.push_str(ARROW);
            out.push_str(ent);
        }
        out
    }

    /// Inverse of [`verbalize`](Self::verbalize) for labels free of the separator.
    pub fn parse_verbalized(text: &str) -> Result<Self> {
        let parts: Vec<String> = text.split(ARROW).map(str::to_owned).collect();
        if parts.len().is_multiple_of(2) {
            return Err(Error::InvalidPath(format!(
                "even number of segments in {text:?}"
            )));
        }
        let mut entities = Vec::with_capacity(parts.len() / 2 + 1);
        let mut relations = Vec::with_capacity(parts.len() / 2);
        for (i, p) in parts.into_iter().enumerate() {
            if i % 2 == 0 {
                entities.push(p);
            } else {
                relations.push(p);
            }
        }
        Self::new(entities, relations)
    }
}

impl fmt::Display for ReasoningPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.verbalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPath {
    pub path: ReasoningPath,
    /// Ranking score supplied by an external retriever, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_score: Option<f64>,
    /// Set on synthetic noise paths.
    #[serde(default)]
    pub noise: bool,
}

impl RetrievedPath {
    pub fn new(path: ReasoningPath) -> Self {
        Self {
            path,
            external_score: None,
            noise: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalSource {
    Builtin,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub question_id: String,
    pub paths: Vec<RetrievedPath>,
    pub source: RetrievalSource,
    pub retriever_name: String,
    /// No topic entity could be resolved against the graph.
    #[serde(default)]
    pub no_anchor: bool,
}

impl RetrievalResult {
    pub fn empty(question_id: &str, source: RetrievalSource, retriever_name: &str) -> Self {
        Self {
            question_id: question_id.to_owned(),
            paths: Vec::new(),
            source,
            retriever_name: retriever_name.to_owned(),
            no_anchor: false,
        }
    }

    pub fn noise_count(&self) -> usize {
        self.paths.iter().filter(|p| p.noise).count()
    }
}

pub const BUILTIN_RETRIEVER: &str = "bfs";

/// All simple outgoing paths of 1..=`max_hops` hops from the question's topic
/// entities, shorter first then by verbalization, truncated to `max_paths`.
pub fn retrieve_paths(
    g: &KnowledgeGraph,
    q: &Question,
    max_hops: usize,
    max_paths: usize,
) -> Result<RetrievalResult> {
    if !(1..=4).contains(&max_hops) {
        return Err(Error::InvalidParameter(format!(
            "max_hops must be in [1,4], got {max_hops}"
        )));
    }
    let mut result = RetrievalResult::empty(&q.id, RetrievalSource::Builtin, BUILTIN_RETRIEVER);

    let mut anchors: Vec<EntityId> = Vec::new();
    for name in &q.topic_entities {
        match g.entity_id(name) {
            Some(id) if !anchors.contains(&id) => anchors.push(id),
            Some(_) => {}
            None => {
                tracing::warn!(question = %q.id, entity = %name, "topic entity not in graph, skipped")
            }
        }
    }
    if anchors.is_empty() {
        result.no_anchor = true;
        return Ok(result);
    }

    type Partial = (Vec<EntityId>, Vec<RelationId>);
    let mut frontier: Vec<Partial> = anchors.iter().map(|&a| (vec![a], Vec::new())).collect();
    let mut seen: HashSet<String> = HashSet::new();

    for _ in 0..max_hops {
        if result.paths.len() >= max_paths {
            break;
        }
        let mut next: Vec<Partial> = Vec::new();
        for (ents, rels) in &frontier {
            let last = *ents.last().expect("nonempty");
            for &(rel, dst) in g.out_edges(last) {
                if ents.contains(&dst) {
                    continue;
                }
                let mut e = ents.clone();
                e.push(dst);
                let mut r = rels.clone();
                r.push(rel);
                next.push((e, r));
            }
        }
        let mut level: Vec<(String, ReasoningPath)> = next
            .iter()
            .map(|(ents, rels)| {
                let path = ReasoningPath {
                    entities: ents.iter().map(|&e| g.entity_name(e).to_owned()).collect(),
                    relations: rels
                        .iter()
                        .map(|&r| g.relation_name(r).to_owned())
                        .collect(),
                };
                (path.verbalize(), path)
            })
            .collect();
        level.sort_by(|a, b| a.0.cmp(&b.0));
        for (text, path) in level {
            if result.paths.len() >= max_paths {
                break;
            }
            if seen.insert(text) {
                result.paths.push(RetrievedPath::new(path));
            }
        }
        frontier = next;
    }
    Ok(result)
}

#[derive(Deserialize)]
struct IngestRow {
    question_id: String,
    entities: Vec<String>,
    relations: Vec<String>,
    #[serde(default)]
    score: Option<f64>,
}

/// Reads a retrieved-paths JSONL file into one result per question id, in
/// first-seen order, deduplicated by verbalized form (first occurrence wins).
pub fn ingest_paths(path: impl AsRef<Path>) -> Result<Vec<RetrievalResult>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ingested".to_owned());

    let mut order: Vec<RetrievalResult> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut seen: Vec<HashSet<String>> = Vec::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: IngestRow =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let rp = ReasoningPath::new(row.entities, row.relations)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if let Some(s) = row.score {
            if !s.is_finite() {
                return Err(Error::parse(path, lineno, "non-finite score"));
            }
        }
        let i = *slot.entry(row.question_id.clone()).or_insert_with(|| {
            order.push(RetrievalResult::empty(
                &row.question_id,
                RetrievalSource::Ingested,
                &name,
            ));
            seen.push(HashSet::new());
            order.len() - 1
        });
        if seen[i].insert(rp.verbalize()) {
            order[i].paths.push(RetrievedPath {
                path: rp,
                external_score: row.score,
                noise: false,
            });
        }
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;
    use proptest::prelude::*;
    use std::io::Write;

    const SPORTS: &str = "Northern Colorado Bears football → education.educational_institution.sports_teams → University of Northern Colorado";

    fn greeley_graph() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        b.add(
            "Northern Colorado Bears football",
            "education.educational_institution.sports_teams",
            "University of Northern Colorado",
        );
        b.add(
            "Greeley",
            "location.location.containedby",
            "United States of America",
        );
        b.add(
            "Greeley",
            "location.location.containedby",
            "Greeley Masonic Temple",
        );
        b.add(
            "University of Northern Colorado",
            "location.location.containedby",
            "Greeley",
        );
        b.build().unwrap()
    }

    fn question(topics: &[&str]) -> Question {
        Question {
            id: "q1".into(),
            text: "What educational institution has a football sports team named Northern Colorado Bears is in Greeley, Colorado?".into(),
            topic_entities: topics.iter().map(|s| s.to_string()).collect(),
            gold_answers: vec!["University of Northern Colorado".into()],
        }
    }

    #[test]
    fn verbalize_formats() {
        let p = ReasoningPath::triple("A", "r", "B");
        assert_eq!(p.verbalize(), "A → r → B");
        let p = ReasoningPath::triple(
            "Greeley",
            "location.location.containedby",
            "United States of America",
        );
        assert_eq!(
            p.verbalize(),
            "Greeley → location.location.containedby → United States of America"
        );
        assert_eq!(ReasoningPath::entity("A").verbalize(), "A");
        assert!(
            ReasoningPath::new(vec!["A".into(), "B".into()], vec!["r1".into(), "r2".into()])
                .is_err()
        );
    }

    #[test]
    fn greeley_one_hop_retrieval() {
        let g = greeley_graph();
        let r = retrieve_paths(
            &g,
            &question(&["Northern Colorado Bears football", "Greeley"]),
            1,
            100,
        )
        .unwrap();
        let texts: Vec<String> = r.paths.iter().map(|p| p.path.verbalize()).collect();
        assert_eq!(
            texts,
            vec![
                "Greeley → location.location.containedby → Greeley Masonic Temple",
                "Greeley → location.location.containedby → United States of America",
                SPORTS,
            ]
        );
        assert!(!r.no_anchor);
    }

    #[test]
    fn two_hops_are_simple_and_come_after_one_hop() {
        let g = greeley_graph();
        let r =
            retrieve_paths(&g, &question(&["Northern Colorado Bears football"]), 3, 100).unwrap();
        let hops: Vec<usize> = r.paths.iter().map(|p| p.path.hops()).collect();
        assert_eq!(hops, vec![1, 2, 3, 3]);
        for p in &r.paths {
            let ents = p.path.entities();
            let unique: HashSet<_> = ents.iter().collect();
            assert_eq!(unique.len(), ents.len());
        }
    }

    #[test]
    fn unresolvable_topic_is_no_anchor() {
        let g = greeley_graph();
        let r = retrieve_paths(&g, &question(&["Fort Collins"]), 2, 10).unwrap();
        assert!(r.no_anchor);
        assert!(r.paths.is_empty());
    }

    #[test]
    fn truncation_is_deterministic() {
        let mut b = GraphBuilder::new();
        for t in ["e", "d", "c", "b", "a"] {
            b.add("hub", "r", t);
        }
        let g = b.build().unwrap();
        let mut q = question(&["hub"]);
        q.topic_entities = vec!["hub".into()];
        let r = retrieve_paths(&g, &q, 1, 2).unwrap();
        let texts: Vec<String> = r.paths.iter().map(|p| p.path.verbalize()).collect();
        assert_eq!(texts, vec!["hub → r → a", "hub → r → b"]);
        assert_eq!(r, retrieve_paths(&g, &q, 1, 2).unwrap());
    }

    #[test]
    fn max_hops_range_checked() {
        let g = greeley_graph();
        assert!(retrieve_paths(&g, &question(&["Greeley"]), 0, 10).is_err());
        assert!(retrieve_paths(&g, &question(&["Greeley"]), 5, 10).is_err());
    }

    fn write_tmp(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new()
            .suffix(".jsonl")
            .tempfile()
            .unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_greeley_listing_dedups() {
        let row = |e: [&str; 2], r: &str| {
            serde_json::json!({"question_id": "q1", "entities": e, "relations": [r]}).to_string()
        };
        let sports = row(
            [
                "Northern Colorado Bears football",
                "University of Northern Colorado",
            ],
            "education.educational_institution.sports_teams",
        );
        let f = write_tmp(&[
            sports.clone(),
            sports,
            row(
                ["Greeley", "United States of America"],
                "location.location.containedby",
            ),
            row(
                ["Greeley", "Greeley Masonic Temple"],
                "location.location.containedby",
            ),
        ]);
        let results = ingest_paths(f.path()).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].paths.len(), 3);
        assert_eq!(results[0].source, RetrievalSource::Ingested);
        assert_eq!(results[0].paths[0].path.verbalize(), SPORTS);
    }

    #[test]
    fn ingest_rejects_length_mismatch_with_line() {
        let f = write_tmp(&[
            r#"{"question_id":"q","entities":["A","B"],"relations":["r"]}"#.into(),
            r#"{"question_id":"q","entities":["A","B"],"relations":["r1","r2"]}"#.into(),
        ]);
        let err = ingest_paths(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn ingest_keeps_scores_and_groups() {
        let f = write_tmp(&[
            r#"{"question_id":"a","entities":["A","B"],"relations":["r"],"score":0.7}"#.into(),
            r#"{"question_id":"b","entities":["C"],"relations":[]}"#.into(),
            r#"{"question_id":"a","entities":["B","C"],"relations":["s"]}"#.into(),
        ]);
        let res = ingest_paths(f.path()).unwrap();
        assert_eq!(
            res.iter()
                .map(|r| r.question_id.as_str())
                .collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(res[0].paths.len(), 2);
        assert_eq!(res[0].paths[0].external_score, Some(0.7));
        assert_eq!(res[1].paths[0].path.hops(), 0);
    }

    #[test]
    fn dataset_rejects_duplicate_ids() {
        let q = r#"{"id":"x","question":"q?","topic_entities":[],"answers":["a"]}"#.to_string();
        let f = write_tmp(&[q.clone(), q]);
        assert!(matches!(
            load_dataset(f.path()),
            Err(Error::DuplicateId { .. })
        ));
    }

    fn label() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_. ]{1,12}"
    }

    proptest! {
        #[test]
        fn verbalize_round_trips(ents in prop::collection::vec(label(), 1..5), rels in prop::collection::vec(label(), 4)) {
            let n = ents.len() - 1;
            let p = ReasoningPath::new(ents, rels[..n].to_vec()).unwrap();
            prop_assert_eq!(ReasoningPath::parse_verbalized(&p.verbalize()).unwrap(), p);
        }

        #[test]
        fn builtin_paths_exist_in_graph(edges in prop::collection::vec((0u8..12, 0u8..3, 0u8..12), 1..40), hops in 1usize..4) {
            let mut b = GraphBuilder::new();
            for (h, r, t) in &edges {
                b.add(&format!("e{h}"), &format!("r{r}"), &format!("e{t}"));
            }
            let g = b.build().unwrap();
            let q = Question { id: "p".into(), text: "t".into(), topic_entities: vec![format!("e{}", edges[0].0)], gold_answers: vec![] };
            let r = retrieve_paths(&g, &q, hops, 500).unwrap();
            let mut seen = HashSet::new();
            for p in &r.paths {
                prop_assert!(seen.insert(p.path.verbalize()));
                let e = p.path.entities();
                for (i, rel) in p.path.relations().iter().enumerate() {
                    prop_assert!(g.contains_triple(&e[i], rel, &e[i + 1]));
                }
            }
            let hop_seq: Vec<usize> = r.paths.iter().map(|p| p.path.hops()).collect();
            prop_assert!(hop_seq.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
