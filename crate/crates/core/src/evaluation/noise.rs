use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::retrieval::{ReasoningPath, RetrievalResult, RetrievedPath};
use crate::text::normalize_answer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub n_noise: usize,
    pub seed: u64,
    /// Share of noise paths built by swapping the tail of a retrieved path.
    pub corrupt_tail: f64,
    /// Share of noise paths built as random 2-hop walks.
    pub random_walk: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            n_noise: 30,
            seed: 0,
            corrupt_tail: 0.5,
            random_walk: 0.5,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        if !ok(self.corrupt_tail)
            || !ok(self.random_walk)
            || (self.corrupt_tail + self.random_walk - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParameter(format!(
                "noise mix must be two proportions summing to 1, got {} and {}",
                self.corrupt_tail, self.random_walk
            )));
        }
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Appends `cfg.n_noise` synthetic noise paths to `result`.
///
/// The generator is seeded from `cfg.seed` and the question id, so each
/// question's noise is independent of processing order.
pub fn inject_noise<S: AsRef<str>>(
    g: &KnowledgeGraph,
    result: &RetrievalResult,
    gold: &[S],
    cfg: &NoiseConfig,
) -> Result<RetrievalResult> {
    cfg.validate()?;
    if g.entity_count() == 0 || g.triples().is_empty() {
        return Err(Error::EmptyGraph);
    }
    let mut out = result.clone();
    if cfg.n_noise == 0 {
        return Ok(out);
    }
    let gold: HashSet<String> = gold.iter().map(|s| normalize_answer(s.as_ref())).collect();
    let non_gold: Vec<EntityId> = (0..g.entity_count() as u32)
        .map(EntityId)
        .filter(|&e| !gold.contains(&normalize_answer(g.entity_name(e))))
        .collect();
    let originals: Vec<&ReasoningPath> = result.paths.iter().map(|p| &p.path).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(&result.question_id));
    for _ in 0..cfg.n_noise {
        let corrupt =
            !originals.is_empty() && !non_gold.is_empty() && rng.random_bool(cfg.corrupt_tail);
        let path = if corrupt {
            let base = *originals.choose(&mut rng).expect("non-empty");
            let tail = *non_gold.choose(&mut rng).expect("non-empty");
            corrupt_tail(base, g.entity_name(tail))
        } else {
            random_walk(g, &mut rng)
        };
        out.paths.push(RetrievedPath {
            path,
            external_score: None,
            noise: true,
        });
    }
    Ok(out)
}

fn corrupt_tail(base: &ReasoningPath, tail: &str) -> ReasoningPath {
    let mut entities = base.entities().to_vec();
    if let Some(last) = entities.last_mut() {
        *last = tail.to_owned();
    }
    ReasoningPath::new(entities, base.relations().to_vec()).expect("shape preserved")
}

/// Walks up to two outgoing hops from a uniformly random entity. Entities
/// without outgoing edges restart from the head of a random triple.
fn random_walk(g: &KnowledgeGraph, rng: &mut ChaCha8Rng) -> ReasoningPath {
    let mut current = EntityId(rng.random_range(0..g.entity_count() as u32));
    if g.out_edges(current).is_empty() {
        current = g.triples()[rng.random_range(0..g.triples().len())].head;
    }
    let mut entities = vec![g.entity_name(current).to_owned()];
    let mut relations = Vec::new();
    for _ in 0..2 {
        let Some(&(r, next)) = g.out_edges(current).choose(rng) else {
            break;
        };
        relations.push(g.relation_name(r).to_owned());
        entities.push(g.entity_name(next).to_owned());
        current = next;
    }
    ReasoningPath::new(entities, relations).expect("walk has consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;
    use crate::retrieval::RetrievalSource;

    fn graph() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        for (h, r, t) in [
            ("a", "r1", "b"),
            ("b", "r2", "c"),
            ("c", "r3", "a"),
            ("d", "r1", "gold"),
        ] {
            b.add(h, r, t);
        }
        b.build().unwrap()
    }

    fn result(n: usize) -> RetrievalResult {
        let mut r = RetrievalResult::empty("q1", RetrievalSource::Builtin, "bfs");
        for i in 0..n {
            r.paths.push(RetrievedPath::new(ReasoningPath::triple(
                "a",
                "r1",
                format!("x{i}"),
            )));
        }
        r
    }

    #[test]
    fn exact_count_and_prefix_preserved() {
        let g = graph();
        let input = result(3);
        let cfg = NoiseConfig {
            seed: 7,
            ..Default::default()
        };
        let out = inject_noise(&g, &input, &["gold"], &cfg).unwrap();
        assert_eq!(out.paths.len(), 33);
        assert_eq!(&out.paths[..3], &input.paths[..]);
        assert_eq!(out.noise_count(), 30);
        // Corrupted copies of "a → r1 → x_i" never get the gold tail.
        let corrupted: Vec<_> = out.paths[3..]
            .iter()
            .filter(|p| p.path.hops() == 1 && p.path.entities()[0] == "a")
            .collect();
        assert!(!corrupted.is_empty());
        assert!(corrupted.iter().all(|p| p.path.tail() != "gold"));
    }

    #[test]
    fn zero_noise_is_identity_and_seed_is_deterministic() {
        let g = graph();
        let input = result(2);
        let zero = NoiseConfig {
            n_noise: 0,
            ..Default::default()
        };
        assert_eq!(inject_noise(&g, &input, &["gold"], &zero).unwrap(), input);

        let cfg = NoiseConfig {
            seed: 99,
            ..Default::default()
        };
        let a = inject_noise(&g, &input, &["gold"], &cfg).unwrap();
        let b = inject_noise(&g, &input, &["gold"], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_result_uses_random_walks() {
        let g = graph();
        let cfg = NoiseConfig {
            n_noise: 10,
            seed: 1,
            corrupt_tail: 1.0,
            random_walk: 0.0,
        };
        let out = inject_noise(&g, &result(0), &["gold"], &cfg).unwrap();
        assert_eq!(out.paths.len(), 10);
        for p in &out.paths {
            let e = p.path.entities();
            for (i, r) in p.path.relations().iter().enumerate() {
                assert!(g.contains_triple(&e[i], r, &e[i + 1]));
            }
            assert!(p.path.hops() >= 1);
        }
    }

    #[test]
    fn invalid_mix_rejected() {
        let cfg = NoiseConfig {
            corrupt_tail: 0.7,
            random_walk: 0.7,
            ..Default::default()
        };
        assert!(inject_noise(&graph(), &result(1), &["gold"], &cfg).is_err());
    }
}
