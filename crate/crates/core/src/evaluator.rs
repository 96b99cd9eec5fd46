//! Ground truth and metrics: exact attention, oracle top tokens, recall,
//! selection stability, and exhaustive audits of the index bounds.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv_index::{HierarchicalIndex, TokenStore};
use crate::retriever::score_upper_bound;
use crate::vector::{distance, dot};

/// Absolute slack allowed by the audits.
pub const AUDIT_TOLERANCE: f64 = 1e-6;

/// Exact softmax attention over every stored token.
///
/// Two passes (max, then weighted sum) rather than the single streaming pass
/// used by the retriever, so the two can check each other.
pub fn full_attention(q: &[f64], store: &TokenStore) -> Result<Vec<f64>> {
    if store.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if q.len() != store.dim() {
        return Err(Error::DimensionMismatch {
            expected: store.dim(),
            got: q.len(),
        });
    }
    let scale = 1.0 / (q.len() as f64).sqrt();
    let logits: Vec<f64> = store.keys().map(|k| dot(q, k) * scale).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut out = vec![0.0; store.dim()];
    for (l, v) in logits.iter().zip(store.values()) {
        let w = (l - max).exp();
        z += w;
        out.iter_mut().zip(v).for_each(|(o, x)| *o += w * x);
    }
    out.iter_mut().for_each(|o| *o /= z);
    Ok(out)
}

/// Ids of the `budget` keys with the largest `q . k`, ties toward the smaller id.
/// Returned sorted ascending.
pub fn oracle_topk_tokens<'a, I>(q: &[f64], keys: I, budget: usize) -> Vec<usize>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut scored: Vec<(usize, f64)> = keys
        .into_iter()
        .enumerate()
        .map(|(i, k)| (i, dot(q, k)))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if budget < scored.len() {
        scored.select_nth_unstable_by(budget, order);
        scored.truncate(budget);
    }
    let mut ids: Vec<usize> = scored.into_iter().map(|(i, _)| i).collect();
    ids.sort_unstable();
    ids
}

/// `|retrieved ∩ oracle| / |oracle|`.
pub fn recall_rate(retrieved: &[usize], oracle: &[usize]) -> Result<f64> {
    if oracle.is_empty() {
        return Err(Error::EmptyOracle);
    }
    let retrieved: BTreeSet<usize> = retrieved.iter().copied().collect();
    let oracle: BTreeSet<usize> = oracle.iter().copied().collect();
    let hit = oracle.intersection(&retrieved).count();
    Ok(hit as f64 / oracle.len() as f64)
}

/// `|a ∩ b| / |a ∪ b|`; two empty sets count as identical.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Fraction of `current` seen in any of the `history` sets. Empty `current` is vacuously 1.
pub fn window_hit<'a, I>(history: I, current: &[usize]) -> f64
where
    I: IntoIterator<Item = &'a [usize]>,
{
    if current.is_empty() {
        return 1.0;
    }
    let seen: BTreeSet<usize> = history.into_iter().flatten().copied().collect();
    let cur: BTreeSet<usize> = current.iter().copied().collect();
    cur.intersection(&seen).count() as f64 / cur.len() as f64
}

/// Selected-cluster sets over a decode run and the window used for hit rates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityTrace {
    pub window: usize,
    pub steps: Vec<Vec<usize>>,
}

impl StabilityTrace {
    pub fn new(window: usize) -> Self {
        Self {
            window,
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, selected: Vec<usize>) {
        self.steps.push(selected);
    }

    /// Jaccard against the previous step, from step 1 on.
    pub fn jaccard_series(&self) -> Vec<f64> {
        self.steps
            .windows(2)
            .map(|w| jaccard(&w[1], &w[0]))
            .collect()
    }

    pub fn window_hit_series(&self) -> Vec<f64> {
        (0..self.steps.len())
            .map(|t| {
                let lo = t.saturating_sub(self.window);
                window_hit(self.steps[lo..t].iter().map(Vec::as_slice), &self.steps[t])
            })
            .collect()
    }

    /// Steps whose selection was empty, where the vacuous conventions applied.
    pub fn vacuous_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.is_empty()).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub recall: f64,
    pub jaccard_series: Vec<f64>,
    pub window_hit_series: Vec<f64>,
    pub memory_ratio: f64,
    pub scanned_centroids_series: Vec<usize>,
    /// Steps scored by an empty-set convention rather than measured.
    pub vacuous_steps: usize,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,jaccard,window_hit,scanned_centroids\n");
        let n = self
            .window_hit_series
            .len()
            .max(self.scanned_centroids_series.len());
        for t in 0..n {
            let j = if t == 0 {
                String::new()
            } else {
                self.jaccard_series
                    .get(t - 1)
                    .map(|v| v.to_string())
                    .unwrap_or_default()
            };
            let w = self
                .window_hit_series
                .get(t)
                .map(|v| v.to_string())
                .unwrap_or_default();
            let s = self
                .scanned_centroids_series
                .get(t)
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{t},{j},{w},{s}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UbAudit {
    pub checks: u64,
    pub violations: u64,
    /// Largest `max member score - bound` seen; negative when every bound held with room.
    pub worst_excess: f64,
}

/// For every query and every fine cluster and coarse unit, compare the best
/// descendant chunk score with the node's bound.
pub fn audit_ub_soundness(index: &HierarchicalIndex, queries: &[Vec<f64>]) -> UbAudit {
    let mut audit = UbAudit {
        worst_excess: f64::NEG_INFINITY,
        ..UbAudit::default()
    };
    let mut scores = vec![0.0; index.chunks.len()];
    let mut cluster_best = vec![f64::NEG_INFINITY; index.fine.len()];
    for q in queries {
        for (s, chunk) in scores.iter_mut().zip(&index.chunks) {
            *s = dot(q, &chunk.rep_key);
        }
        for (c, cluster) in index.fine.iter().enumerate() {
            let best = cluster
                .members
                .iter()
                .map(|&j| scores[j])
                .fold(f64::NEG_INFINITY, f64::max);
            cluster_best[c] = best;
            record(
                &mut audit,
                best,
                score_upper_bound(q, &cluster.centroid, cluster.radius),
            );
        }
        for unit in &index.coarse {
            let best = unit
                .members
                .iter()
                .map(|&c| cluster_best[c])
                .fold(f64::NEG_INFINITY, f64::max);
            record(
                &mut audit,
                best,
                score_upper_bound(q, &unit.centroid, unit.radius),
            );
        }
    }
    audit
}

fn record(audit: &mut UbAudit, best: f64, bound: f64) {
    if best == f64::NEG_INFINITY {
        return;
    }
    audit.checks += 1;
    let excess = best - bound;
    audit.worst_excess = audit.worst_excess.max(excess);
    if excess > AUDIT_TOLERANCE {
        audit.violations += 1;
    }
}

/// Count chunk representatives lying outside the radius of their cluster or unit.
pub fn audit_covering(index: &HierarchicalIndex) -> u64 {
    let mut violations = 0;
    for chunk in &index.chunks {
        let cluster = &index.fine[chunk.cluster];
        if distance(&chunk.rep_key, &cluster.centroid) > cluster.radius + AUDIT_TOLERANCE {
            violations += 1;
        }
        let unit = &index.coarse[cluster.unit];
        if distance(&chunk.rep_key, &unit.centroid) > unit.radius + AUDIT_TOLERANCE {
            violations += 1;
        }
    }
    violations
}

/// Check that fine members partition the chunks and unit members partition the clusters,
/// with back-pointers consistent. Returns a description of the first problem.
pub fn check_partition(index: &HierarchicalIndex) -> std::result::Result<(), String> {
    let mut chunk_seen = vec![0u32; index.chunks.len()];
    for (c, cluster) in index.fine.iter().enumerate() {
        if cluster.members.len() != cluster.member_count {
            return Err(format!("cluster {c} member_count disagrees with members"));
        }
        for &j in &cluster.members {
            chunk_seen[j] += 1;
            if index.chunks[j].cluster != c {
                return Err(format!("chunk {j} points at the wrong cluster"));
            }
        }
    }
    if let Some(j) = chunk_seen.iter().position(|&n| n != 1) {
        return Err(format!("chunk {j} appears {} times", chunk_seen[j]));
    }
    let mut cluster_seen = vec![0u32; index.fine.len()];
    for (g, unit) in index.coarse.iter().enumerate() {
        for &c in &unit.members {
            cluster_seen[c] += 1;
            if index.fine[c].unit != g {
                return Err(format!("cluster {c} points at the wrong unit"));
            }
        }
    }
    if let Some(c) = cluster_seen.iter().position(|&n| n != 1) {
        return Err(format!("cluster {c} appears {} times", cluster_seen[c]));
    }
    Ok(())
}
