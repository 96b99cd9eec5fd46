//! Top-down retrieval: score coarse units by their score upper bound, refine
//! into the fine clusters of the survivors, then attend exactly over the
//! tokens of the selected clusters plus the sink and the unindexed buffer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv_index::HierarchicalIndex;
use crate::vector::{dot, norm};

/// `q . centroid + |q| * radius`: no member within `radius` of `centroid` can score higher.
#[inline]
pub fn score_upper_bound(q: &[f64], centroid: &[f64], radius: f64) -> f64 {
    dot(q, centroid) + norm(q) * radius
}

#[inline]
fn ub_with_norm(q: &[f64], q_norm: f64, centroid: &[f64], radius: f64) -> f64 {
    dot(q, centroid) + q_norm * radius
}

fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Ids of the `k` highest scores, ordered by score descending then id ascending.
pub fn select_topk(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
    let mut ranked = scores.to_vec();
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k, rank_order);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(rank_order);
    ranked.into_iter().map(|(id, _)| id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Keep the `k_c` best fine clusters.
    FixedClusters(usize),
    /// Fill up to this many tokens, walking clusters in bound order.
    TokenBudget(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub k_g: usize,
    pub selection: SelectionMode,
    pub sink_size: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            k_g: 8,
            selection: SelectionMode::TokenBudget(1024),
            sink_size: 16,
        }
    }
}

impl Budgets {
    pub fn token_budget(budget: usize) -> Self {
        Self {
            selection: SelectionMode::TokenBudget(budget),
            ..Self::default()
        }
    }

    pub fn fixed_clusters(k_g: usize, k_c: usize) -> Self {
        Self {
            k_g,
            selection: SelectionMode::FixedClusters(k_c),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sel_ok = match self.selection {
            SelectionMode::FixedClusters(k) | SelectionMode::TokenBudget(k) => k >= 1,
        };
        if self.k_g == 0 || !sel_ok {
            return Err(Error::InvalidConfig(
                "k_g and the cluster/token budget must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub selected_units: Vec<usize>,
    /// Sorted ascending.
    pub selected_clusters: Vec<usize>,
    /// Sorted ascending, duplicate-free.
    pub active_token_ids: Vec<usize>,
    pub output: Vec<f64>,
    /// Coarse units scored plus fine clusters scored.
    pub scanned_centroids: usize,
    /// Everything fit in the budget; no pruning happened.
    pub full_attention: bool,
}

/// Selection half of [`retrieve`]; `output` is left empty.
pub fn select_active(
    index: &HierarchicalIndex,
    q: &[f64],
    budgets: &Budgets,
    buffer_ids: &[usize],
) -> Result<RetrievalResult> {
    budgets.validate()?;
    if q.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: q.len(),
        });
    }
    let total = index.total_tokens();
    if let Some(&bad) = buffer_ids.iter().find(|&&id| id >= total) {
        return Err(Error::InvalidConfig(format!(
            "buffer id {bad} outside store of {total} tokens"
        )));
    }

    let degenerate = match budgets.selection {
        SelectionMode::TokenBudget(b) => total <= b,
        SelectionMode::FixedClusters(_) => false,
    };
    if degenerate || index.fine.is_empty() {
        return Ok(RetrievalResult {
            selected_units: (0..index.coarse.len()).collect(),
            selected_clusters: (0..index.fine.len()).collect(),
            active_token_ids: (0..total).collect(),
            output: Vec::new(),
            scanned_centroids: 0,
            full_attention: true,
        });
    }

    let q_norm = norm(q);
    let unit_scores: Vec<(usize, f64)> = index
        .coarse
        .iter()
        .enumerate()
        .map(|(g, u)| (g, ub_with_norm(q, q_norm, &u.centroid, u.radius)))
        .collect();
    let selected_units = select_topk(&unit_scores, budgets.k_g);

    let cluster_scores: Vec<(usize, f64)> = selected_units
        .iter()
        .flat_map(|&g| index.coarse[g].members.iter().copied())
        .map(|c| {
            let cl = &index.fine[c];
            (c, ub_with_norm(q, q_norm, &cl.centroid, cl.radius))
        })
        .collect();
    let scanned_centroids = unit_scores.len() + cluster_scores.len();

    let mut selected_clusters = match budgets.selection {
        SelectionMode::FixedClusters(k_c) => select_topk(&cluster_scores, k_c),
        SelectionMode::TokenBudget(budget) => {
            let mut ranked = cluster_scores;
            ranked.sort_unstable_by(rank_order);
            let mut taken = Vec::new();
            let mut used = 0usize;
            for (c, _) in ranked {
                let size = index.fine[c].token_count;
                if !taken.is_empty() && used + size > budget {
                    break;
                }
                used += size;
                taken.push(c);
            }
            taken
        }
    };
    selected_clusters.sort_unstable();

    let sink = budgets.sink_size.min(total);
    let mut active: Vec<usize> = (0..sink).collect();
    for &c in &selected_clusters {
        for &j in &index.fine[c].members {
            active.extend(index.chunks[j].span.range());
        }
    }
    active.extend_from_slice(buffer_ids);
    active.sort_unstable();
    active.dedup();

    Ok(RetrievalResult {
        selected_units,
        selected_clusters,
        active_token_ids: active,
        output: Vec::new(),
        scanned_centroids,
        full_attention: false,
    })
}

/// Prune-and-refine retrieval followed by exact attention over the active set.
pub fn retrieve(
    index: &HierarchicalIndex,
    q: &[f64],
    budgets: &Budgets,
    buffer_ids: &[usize],
) -> Result<RetrievalResult> {
    let mut result = select_active(index, q, budgets, buffer_ids)?;
    let keys: Vec<&[f64]> = result
        .active_token_ids
        .iter()
        .map(|&i| index.store.key(i))
        .collect();
    let values: Vec<&[f64]> = result
        .active_token_ids
        .iter()
        .map(|&i| index.store.value(i))
        .collect();
    result.output = sparse_attention(q, &keys, &values)?;
    Ok(result)
}

/// Softmax attention in a single streaming pass with a running maximum.
pub fn sparse_attention(q: &[f64], keys: &[&[f64]], values: &[&[f64]]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    if keys.len() != values.len() {
        return Err(Error::InvalidConfig(format!(
            "{} keys but {} values",
            keys.len(),
            values.len()
        )));
    }
    let d = q.len();
    let vdim = values[0].len();
    let scale = 1.0 / (d as f64).sqrt();
    let mut running_max = f64::NEG_INFINITY;
    let mut denom = 0.0;
    let mut acc = vec![0.0; vdim];
    for (k, v) in keys.iter().zip(values) {
        if k.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: k.len(),
            });
        }
        if v.len() != vdim {
            return Err(Error::DimensionMismatch {
                expected: vdim,
                got: v.len(),
            });
        }
        let logit = dot(q, k) * scale;
        if logit > running_max {
            let rescale = (running_max - logit).exp();
            denom *= rescale;
            acc.iter_mut().for_each(|a| *a *= rescale);
            running_max = logit;
        }
        let w = (logit - running_max).exp();
        denom += w;
        acc.iter_mut().zip(v.iter()).for_each(|(a, x)| *a += w * x);
    }
    acc.iter_mut().for_each(|a| *a /= denom);
    Ok(acc)
}

/// Normalized attention weights, for inspection.
pub fn attention_weights(q: &[f64], keys: &[&[f64]]) -> Result<Vec<f64>> {
    if keys.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let scale = 1.0 / (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}
