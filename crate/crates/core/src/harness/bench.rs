//! Parameter sweeps over context length, token budget and cluster granularity.
//!
//! Output files, all under the chosen directory:
//!
//! * `summary.json` – the resolved [`RunConfig`] and one record per cell.
//! * `cells.csv` – one row per cell, columns as in [`CELL_CSV_HEADER`].
//! * `queries.csv` – one row per (cell, query), columns as in [`QUERY_CSV_HEADER`].
//!
//! Reports carry no timing so reruns are byte-identical; build times go to stderr.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::chunker::{segment, ChunkPolicy};
use crate::error::{Error, Result};
use crate::evaluator::{
    audit_covering, audit_ub_soundness, check_partition, oracle_topk_tokens, recall_rate,
};
use crate::harness::text::ingest_text;
use crate::harness::workload::{gen_clustered_workload, Workload, WorkloadKind, WorkloadSpec};
use crate::kv_index::{build_index, index_memory_bytes, HierarchicalIndex, IndexConfig};
use crate::retriever::{select_active, Budgets, SelectionMode};

pub const CELL_CSV_HEADER: &str = "context,granularity,budget,chunks,fine_clusters,coarse_units,\
recall_mean,recall_min,scanned_mean,active_mean,full_attention_queries,centroid_updates,\
similarity_evals,index_bytes,kv_bytes,memory_ratio,ub_violations,covering_violations";

pub const QUERY_CSV_HEADER: &str =
    "context,granularity,budget,query,recall,scanned_centroids,active_count";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub workload: WorkloadSpec,
    pub policy: ChunkPolicy,
    pub index: IndexConfig,
    /// `k_g` and sink size come from here; the budget is swept.
    pub budgets: Budgets,
    pub budget_sweep: Vec<usize>,
    pub context_sweep: Vec<usize>,
    pub granularity_sweep: Vec<f64>,
    /// Queries per cell used for the exhaustive bound audit.
    pub audit_queries: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadSpec::default(),
            policy: ChunkPolicy::default(),
            index: IndexConfig::default(),
            budgets: Budgets::default(),
            budget_sweep: vec![256, 512, 1024, 2048],
            context_sweep: vec![8 * 1024, 16 * 1024, 32 * 1024, 64 * 1024],
            granularity_sweep: vec![1.0, 2.0, 4.0, 8.0],
            audit_queries: 100,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_sweep.is_empty()
            || self.context_sweep.is_empty()
            || self.granularity_sweep.is_empty()
        {
            return Err(Error::InvalidConfig("sweep lists must be non-empty".into()));
        }
        if self.budget_sweep.contains(&0) || self.context_sweep.contains(&0) {
            return Err(Error::InvalidConfig(
                "budgets and contexts must be positive".into(),
            ));
        }
        self.policy.validate()?;
        self.index.validate()?;
        self.budgets.validate()?;
        for &g in &self.granularity_sweep {
            IndexConfig {
                avg_chunks_per_cluster: g,
                ..self.index.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub context: usize,
    pub granularity: f64,
    pub budget: usize,
    pub chunks: usize,
    pub fine_clusters: usize,
    pub coarse_units: usize,
    pub recall_mean: f64,
    pub recall_min: f64,
    pub scanned_mean: f64,
    pub active_mean: f64,
    pub full_attention_queries: usize,
    pub centroid_updates: u64,
    pub similarity_evals: u64,
    pub index_bytes: u64,
    pub kv_bytes: u64,
    pub memory_ratio: f64,
    pub ub_violations: u64,
    pub covering_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub recall: f64,
    pub scanned_centroids: usize,
    pub active_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: RunConfig,
    pub cells: Vec<CellReport>,
    pub audits_passed: bool,
    #[serde(skip)]
    pub queries: Vec<Vec<QueryRecord>>,
}

/// Tokens and queries for one context length.
pub fn load_workload(spec: &WorkloadSpec, n_tokens: usize) -> Result<Workload> {
    let spec = WorkloadSpec {
        n_tokens,
        ..spec.clone()
    };
    match spec.kind {
        WorkloadKind::ClusteredSynthetic => gen_clustered_workload(&spec),
        WorkloadKind::TextCorpus => {
            spec.validate()?;
            let path = spec.text_path.as_ref().expect("validated");
            let mut tokens = ingest_text(path, spec.d, spec.seed)?;
            tokens.truncate(n_tokens);
            // Queries still come from the synthetic generator's query stream.
            let synthetic = gen_clustered_workload(&WorkloadSpec {
                kind: WorkloadKind::ClusteredSynthetic,
                n_tokens: 1,
                ..spec.clone()
            })?;
            Ok(Workload {
                tokens,
                ..synthetic
            })
        }
    }
}

/// Per-query recall against the exact top-`budget` tokens, plus counters.
pub fn evaluate_queries(
    index: &HierarchicalIndex,
    queries: &[Vec<f64>],
    budgets: &Budgets,
    oracle_budget: usize,
) -> Result<Vec<(QueryRecord, bool)>> {
    queries
        .iter()
        .map(|q| {
            let result = select_active(index, q, budgets, &[])?;
            let oracle = oracle_topk_tokens(q, index.store.keys(), oracle_budget);
            Ok((
                QueryRecord {
                    recall: recall_rate(&result.active_token_ids, &oracle)?,
                    scanned_centroids: result.scanned_centroids,
                    active_count: result.active_token_ids.len(),
                },
                result.full_attention,
            ))
        })
        .collect()
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut cells = Vec::new();
    let mut queries_out = Vec::new();
    let mut audits_passed = true;

    for &context in &cfg.context_sweep {
        let workload = load_workload(&cfg.workload, context)?;
        let spans = segment(&workload.tokens, &cfg.policy)?;
        for &granularity in &cfg.granularity_sweep {
            let index_cfg = IndexConfig {
                avg_chunks_per_cluster: granularity,
                ..cfg.index.clone()
            };
            let started = Instant::now();
            let index = build_index(&workload.tokens, &spans, &index_cfg)?;
            eprintln!(
                "build context={context} granularity={granularity}: {:.3}s",
                started.elapsed().as_secs_f64()
            );

            let audit_set = &workload.queries[..cfg.audit_queries.min(workload.queries.len())];
            let ub = audit_ub_soundness(&index, audit_set);
            let covering = audit_covering(&index);
            if let Err(msg) = check_partition(&index) {
                eprintln!("partition check failed: {msg}");
                audits_passed = false;
            }
            audits_passed &= ub.violations == 0 && covering == 0;
            let mem = index_memory_bytes(&index);

            for &budget in &cfg.budget_sweep {
                let budgets = Budgets {
                    selection: SelectionMode::TokenBudget(budget),
                    ..cfg.budgets
                };
                let records = evaluate_queries(&index, &workload.queries, &budgets, budget)?;
                let n = records.len().max(1) as f64;
                let recall_mean = records.iter().map(|(r, _)| r.recall).sum::<f64>() / n;
                let recall_min = records
                    .iter()
                    .map(|(r, _)| r.recall)
                    .fold(f64::INFINITY, f64::min);
                cells.push(CellReport {
                    context,
                    granularity,
                    budget,
                    chunks: index.chunks.len(),
                    fine_clusters: index.fine.len(),
                    coarse_units: index.coarse.len(),
                    recall_mean,
                    recall_min: if records.is_empty() { 0.0 } else { recall_min },
                    scanned_mean: records
                        .iter()
                        .map(|(r, _)| r.scanned_centroids as f64)
                        .sum::<f64>()
                        / n,
                    active_mean: records
                        .iter()
                        .map(|(r, _)| r.active_count as f64)
                        .sum::<f64>()
                        / n,
                    full_attention_queries: records.iter().filter(|(_, full)| *full).count(),
                    centroid_updates: index.build_stats.centroid_updates,
                    similarity_evals: index.build_stats.similarity_evals,
                    index_bytes: mem.index_bytes,
                    kv_bytes: mem.kv_bytes,
                    memory_ratio: mem.ratio,
                    ub_violations: ub.violations,
                    covering_violations: covering,
                });
                queries_out.push(records.into_iter().map(|(r, _)| r).collect());
            }
        }
    }

    Ok(BenchReport {
        config: cfg.clone(),
        cells,
        audits_passed,
        queries: queries_out,
    })
}

impl BenchReport {
    pub fn cells_csv(&self) -> String {
        let mut out = String::from(CELL_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.context,
                c.granularity,
                c.budget,
                c.chunks,
                c.fine_clusters,
                c.coarse_units,
                c.recall_mean,
                c.recall_min,
                c.scanned_mean,
                c.active_mean,
                c.full_attention_queries,
                c.centroid_updates,
                c.similarity_evals,
                c.index_bytes,
                c.kv_bytes,
                c.memory_ratio,
                c.ub_violations,
                c.covering_violations
            );
        }
        out
    }

    pub fn queries_csv(&self) -> String {
        let mut out = String::from(QUERY_CSV_HEADER);
        out.push('\n');
        for (cell, records) in self.cells.iter().zip(&self.queries) {
            for (i, r) in records.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    cell.context,
                    cell.granularity,
                    cell.budget,
                    i,
                    r.recall,
                    r.scanned_centroids,
                    r.active_count
                );
            }
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("summary.json", serde_json::to_string_pretty(self)? + "\n")?;
        write("cells.csv", self.cells_csv())?;
        write("queries.csv", self.queries_csv())
    }
}
