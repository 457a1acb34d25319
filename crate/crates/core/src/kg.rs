//! In-memory knowledge graph: interned vocabularies, sorted adjacency
//! indices, file loading and personalized PageRank.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Dense string interning table. Ids are assigned in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphFormat {
    Tsv,
    TriplesJsonl,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(GraphFormat::Tsv),
            "triples-jsonl" | "jsonl" => Ok(GraphFormat::TriplesJsonl),
            other => Err(Error::InvalidParameter(format!(
                "unknown graph format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub duplicates_dropped: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entities, {} relations, {} triples ({} duplicates dropped)",
            self.entities, self.relations, self.triples, self.duplicates_dropped
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Incremental constructor; `build` freezes the graph.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    seen: HashSet<Triple>,
    duplicates_dropped: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a triple, returning false if it was a duplicate.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let triple = Triple {
            head: EntityId(self.entities.intern(head)),
            relation: RelationId(self.relations.intern(relation)),
            tail: EntityId(self.entities.intern(tail)),
        };
        if self.seen.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            self.duplicates_dropped += 1;
            false
        }
    }

    pub fn build(self) -> Result<KnowledgeGraph> {
        if self.triples.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let n = self.entities.len();
        let mut out_index = vec![Vec::new(); n];
        let mut in_index = vec![Vec::new(); n];
        for t in &self.triples {
            out_index[t.head.index()].push((t.relation, t.tail));
            in_index[t.tail.index()].push((t.relation, t.head));
        }
        let entities = self.entities;
        let relations = self.relations;
        let key = |&(r, e): &(RelationId, EntityId)| {
            (
                relations.name(r.0).to_owned(),
                entities.name(e.0).to_owned(),
            )
        };
        for list in out_index.iter_mut().chain(in_index.iter_mut()) {
            list.sort_by_cached_key(key);
        }
        Ok(KnowledgeGraph {
            entities,
            relations,
            triples: self.triples,
            out_index,
            in_index,
            duplicates_dropped: self.duplicates_dropped,
        })
    }
}

/// Immutable directed labeled graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    in_index: Vec<Vec<(RelationId, EntityId)>>,
    duplicates_dropped: usize,
}

#[derive(Deserialize)]
struct JsonTriple {
    head: String,
    relation: String,
    tail: String,
}

pub fn load_graph(path: impl AsRef<Path>, format: GraphFormat) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_graph(BufReader::new(file), format, path)
}

/// Parses a graph from any reader; `source` is used in error messages only.
pub fn parse_graph(
    reader: impl BufRead,
    format: GraphFormat,
    source: &Path,
) -> Result<KnowledgeGraph> {
    let mut builder = GraphBuilder::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let (h, r, t) = match format {
            GraphFormat::Tsv => {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 3 {
                    return Err(Error::parse(
                        source,
                        lineno,
                        format!("expected 3 tab-separated fields, found {}", fields.len()),
                    ));
                }
                (
                    fields[0].to_owned(),
                    fields[1].to_owned(),
                    fields[2].to_owned(),
                )
            }
            GraphFormat::TriplesJsonl => {
                let row: JsonTriple = serde_json::from_str(line)
                    .map_err(|e| Error::parse(source, lineno, e.to_string()))?;
                (row.head, row.relation, row.tail)
            }
        };
        for field in [&h, &r, &t] {
            if field.is_empty() {
                return Err(Error::parse(source, lineno, "empty field"));
            }
            if field.contains('\t') {
                return Err(Error::parse(source, lineno, "field contains TAB"));
            }
        }
        builder.add(&h, &r, &t);
    }
    builder.build()
}

impl KnowledgeGraph {
    pub fn report(&self) -> LoadReport {
        LoadReport {
            entities: self.entities.len(),
            relations: self.relations.len(),
            triples: self.triples.len(),
            duplicates_dropped: self.duplicates_dropped,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entities(&self) -> &Interner {
        &self.entities
    }

    pub fn relations(&self) -> &Interner {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entities.get(name).map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.get(name).map(RelationId)
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id.0)
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id.0)
    }

    /// Outgoing edges sorted by (relation string, tail string).
    pub fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_index[e.index()]
    }

    pub fn in_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_index[e.index()]
    }

    pub fn contains_triple(&self, head: &str, relation: &str, tail: &str) -> bool {
        let (Some(h), Some(r), Some(t)) = (
            self.entity_id(head),
            self.relation_id(relation),
            self.entity_id(tail),
        ) else {
            return false;
        };
        self.out_edges(h).contains(&(r, t))
    }

    /// Neighbor list in deterministic (relation string, entity string) order.
    pub fn neighbors(
        &self,
        e: EntityId,
        direction: Direction,
    ) -> Result<Vec<(RelationId, EntityId)>> {
        if e.index() >= self.entities.len() {
            return Err(Error::UnknownEntity(format!("#{}", e.0)));
        }
        Ok(match direction {
            Direction::Out => self.out_index[e.index()].clone(),
            Direction::In => self.in_index[e.index()].clone(),
            Direction::Both => {
                let mut all: Vec<_> = self.out_index[e.index()]
                    .iter()
                    .chain(&self.in_index[e.index()])
                    .copied()
                    .collect();
                all.sort_by(|a, b| {
                    (self.relation_name(a.0), self.entity_name(a.1))
                        .cmp(&(self.relation_name(b.0), self.entity_name(b.1)))
                });
                all
            }
        })
    }

    pub fn neighbors_by_name(
        &self,
        name: &str,
        direction: Direction,
    ) -> Result<Vec<(String, String)>> {
        let id = self
            .entity_id(name)
            .ok_or_else(|| Error::UnknownEntity(name.to_owned()))?;
        Ok(self
            .neighbors(id, direction)?
            .into_iter()
            .map(|(r, e)| {
                (
                    self.relation_name(r).to_owned(),
                    self.entity_name(e).to_owned(),
                )
            })
            .collect())
    }

    /// Writes the graph as TSV in triple insertion order.
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.triples {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.entity_name(t.head),
                self.relation_name(t.relation),
                self.entity_name(t.tail)
            )?;
        }
        Ok(())
    }

    pub fn personalized_pagerank(
        &self,
        seeds: &[EntityId],
        cfg: &PageRankConfig,
    ) -> Result<PageRankVector> {
        cfg.validate()?;
        let n = self.entities.len();
        for s in seeds {
            if s.index() >= n {
                return Err(Error::UnknownEntity(format!("#{}", s.0)));
            }
        }

        let mut teleport = vec![0.0; n];
        let unique: HashSet<EntityId> = seeds.iter().copied().collect();
        if unique.is_empty() {
            teleport.fill(1.0 / n as f64);
        } else {
            let w = 1.0 / unique.len() as f64;
            for s in &unique {
                teleport[s.index()] = w;
            }
        }

        let out_degree: Vec<f64> = self.out_index.iter().map(|l| l.len() as f64).collect();
        let d = cfg.damping;
        let mut x = teleport.clone();
        let mut next = vec![0.0; n];
        let mut iterations_run = 0;
        let mut converged = false;

        while iterations_run < cfg.max_iter {
            let dangling: f64 = (0..n).filter(|&i| out_degree[i] == 0.0).map(|i| x[i]).sum();
            let base = 1.0 - d + d * dangling;
            for (slot, t) in next.iter_mut().zip(&teleport) {
                *slot = base * t;
            }
            for (src, edges) in self.out_index.iter().enumerate() {
                if edges.is_empty() {
                    continue;
                }
                let share = d * x[src] / out_degree[src];
                for &(_, dst) in edges {
                    next[dst.index()] += share;
                }
            }
            let delta: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
            std::mem::swap(&mut x, &mut next);
            iterations_run += 1;
            if delta < cfg.tol {
                converged = true;
                break;
            }
        }

        let total: f64 = x.iter().sum();
        x.iter_mut().for_each(|v| *v /= total);
        Ok(PageRankVector {
            scores: x,
            damping: d,
            iterations_run,
            converged,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PageRankConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankConfig {
    fn default() -> Self {
        Self {
            damping: 0.85,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

impl PageRankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in (0,1), got {}",
                self.damping
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRankVector {
    /// Indexed by `EntityId`.
    pub scores: Vec<f64>,
    pub damping: f64,
    pub iterations_run: usize,
    pub converged: bool,
}

impl PageRankVector {
    pub fn score(&self, e: EntityId) -> f64 {
        self.scores[e.index()]
    }
}
