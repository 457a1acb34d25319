use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrieval::ReasoningPath;
use crate::scoring::ScoredPath;
use crate::text::normalize_answer;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCountBin {
    pub bin_center: f64,
    /// `None` for empty bins.
    pub mean_f1: Option<f64>,
    pub smoothed_f1: Option<f64>,
    pub n: usize,
}

/// Bins `(n_paths, f1)` records into `n_bins` equal-width bins and smooths the
/// per-bin means with a centered moving average of width `window`.
///
/// The moving average skips empty bins and shrinks at the edges.
pub fn analyze_path_count(
    records: &[(usize, f64)],
    n_bins: usize,
    window: usize,
) -> Result<Vec<PathCountBin>> {
    if n_bins < 1 {
        return Err(Error::InvalidParameter("n_bins must be at least 1".into()));
    }
    if window < 1 {
        return Err(Error::InvalidParameter("window must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "path-count analysis needs at least one record".into(),
        ));
    }
    let lo = records.iter().map(|r| r.0).min().unwrap_or(0) as f64;
    let hi = records.iter().map(|r| r.0).max().unwrap_or(0) as f64;
    let width = if hi > lo {
        (hi - lo) / n_bins as f64
    } else {
        1.0
    };

    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(n, f1) in records {
        let idx = (((n as f64 - lo) / width).floor() as usize).min(n_bins - 1);
        sums[idx] += f1;
        counts[idx] += 1;
    }
    let means: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();

    let left = (window - 1) / 2;
    let right = window - 1 - left;
    let bins = (0..n_bins)
        .map(|i| {
            let smoothed = means[i].and_then(|_| {
                let from = i.saturating_sub(left);
                let to = (i + right).min(n_bins - 1);
                let neighbors: Vec<f64> = means[from..=to].iter().flatten().copied().collect();
                (!neighbors.is_empty())
                    .then(|| neighbors.iter().sum::<f64>() / neighbors.len() as f64)
            });
            PathCountBin {
                bin_center: lo + width * (i as f64 + 0.5),
                mean_f1: means[i],
                smoothed_f1: smoothed,
                n: counts[i],
            }
        })
        .collect();
    Ok(bins)
}

pub fn path_count_csv(bins: &[PathCountBin]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut out = String::from("bin_center,mean_f1,smoothed_f1,n\n");
    for b in bins {
        out.push_str(&format!(
            "{:.3},{},{},{}\n",
            b.bin_center,
            opt(b.mean_f1),
            opt(b.smoothed_f1),
            b.n
        ));
    }
    out
}

/// True when any entity on the path equals a gold answer after normalization.
pub fn path_contains_gold<S: AsRef<str>>(path: &ReasoningPath, gold: &[S]) -> bool {
    let gold: HashSet<String> = gold.iter().map(|g| normalize_answer(g.as_ref())).collect();
    path.entities()
        .iter()
        .any(|e| gold.contains(&normalize_answer(e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionByGold {
    pub mean_gold: Option<f64>,
    pub mean_nongold: Option<f64>,
    pub n_gold: usize,
    pub n_nongold: usize,
}

impl AttentionByGold {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| {
            v.map(|x| format!("{x:.6}"))
                .unwrap_or_else(|| "undefined".into())
        };
        format!(
            "group,mean_score,n\ngold,{},{}\nnongold,{},{}\n",
            opt(self.mean_gold),
            self.n_gold,
            opt(self.mean_nongold),
            self.n_nongold
        )
    }
}

pub fn analyze_attention_by_gold(scored: &[(ScoredPath, bool)]) -> AttentionByGold {
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let (gold, nongold): (Vec<_>, Vec<_>) = scored.iter().partition(|(_, g)| *g);
    let gold: Vec<f64> = gold.iter().map(|(p, _)| p.score).collect();
    let nongold: Vec<f64> = nongold.iter().map(|(p, _)| p.score).collect();
    AttentionByGold {
        mean_gold: mean(&gold),
        mean_nongold: mean(&nongold),
        n_gold: gold.len(),
        n_nongold: nongold.len(),
    }
}
