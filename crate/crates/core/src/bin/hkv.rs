//! Command-line front end: chunk, build, query, stream, bench, export.
//!
//! Exit codes: 0 success, 1 usage or runtime error, 2 invariant audit failure.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use hkv::chunker::{segment, BoundaryKind, TokenRecord};
use hkv::error::{Error, Result};
use hkv::evaluator::{audit_covering, audit_ub_soundness, check_partition};
use hkv::harness::bench::{load_workload, run_bench, RunConfig};
use hkv::harness::text::ingest_text;
use hkv::harness::workload::ClusteredGenerator;
use hkv::kv_index::{build_index, HierarchicalIndex};
use hkv::retriever::{retrieve, Budgets, SelectionMode};
use hkv::streamer::{DynamicChunking, GraftScope, StreamConfig, StreamState};

#[derive(Parser)]
#[command(
    name = "hkv",
    version,
    about = "Hierarchical chunk index for sparse KV retrieval"
)]
struct Cli {
    /// Seed for workload generation, text hashing and clustering.
    #[arg(long, global = true, env = "HKV_SEED")]
    seed: Option<u64>,
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, env = "HKV_CONFIG")]
    config: Option<PathBuf>,
    /// Directory for written artifacts.
    #[arg(long, global = true, env = "HKV_OUT", default_value = "hkv-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a UTF-8 text file and print the spans as JSON.
    Chunk {
        input: PathBuf,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Build an index, write `<out>/index.json` and print its stats.
    Build(Source),
    /// Retrieve and attend for one query vector against a saved index.
    /// The index is audited on load.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// JSON array of numbers.
        #[arg(long)]
        query: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Prefill, then decode step by step on the synthetic workload; prints JSONL.
    Stream {
        #[arg(long, default_value_t = 8192)]
        prefill: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Aim every query at this blob instead of drawing from the query mix.
        #[arg(long)]
        blob: Option<usize>,
        #[arg(long, value_enum, default_value_t = Scope::Scoped)]
        scope: Scope,
        #[arg(long, value_enum, default_value_t = Chunking::Structure)]
        chunking: Chunking,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Run the configured sweeps and write summary.json, cells.csv, queries.csv.
    Bench,
    /// Print chunk_id, cluster_id, unit_id and representative key per chunk as CSV.
    Export {
        #[arg(long)]
        index: PathBuf,
    },
}

#[derive(Args)]
struct Source {
    /// Plain-text file to ingest instead of the synthetic workload.
    #[arg(long, conflicts_with = "tokens")]
    text: Option<PathBuf>,
    /// JSON array of token records.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Synthetic context length; defaults to the configured workload size.
    #[arg(long)]
    n_tokens: Option<usize>,
}

#[derive(Args)]
struct BudgetArgs {
    /// Token budget for retrieved clusters.
    #[arg(long, conflicts_with = "k_c")]
    budget: Option<usize>,
    /// Keep a fixed number of fine clusters instead of filling a budget.
    #[arg(long)]
    k_c: Option<usize>,
    #[arg(long)]
    k_g: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    Scoped,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Chunking {
    Structure,
    Fixed,
}

enum Failure {
    Error(Error),
    Audit(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Error(Error::io("<stdout>", e))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Audit(msg)) => {
            eprintln!("audit failed: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&body)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.workload.seed = seed;
        cfg.index.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&body)?)
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn print_json(value: &impl Serialize) -> std::result::Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn budgets(cfg: &RunConfig, args: &BudgetArgs) -> Result<Budgets> {
    let mut b = cfg.budgets;
    if let Some(k_g) = args.k_g {
        b.k_g = k_g;
    }
    if let Some(budget) = args.budget {
        b.selection = SelectionMode::TokenBudget(budget);
    }
    if let Some(k_c) = args.k_c {
        b.selection = SelectionMode::FixedClusters(k_c);
    }
    b.validate()?;
    Ok(b)
}

fn audit_index(
    index: &HierarchicalIndex,
    queries: &[Vec<f64>],
) -> std::result::Result<(), Failure> {
    check_partition(index).map_err(Failure::Audit)?;
    let covering = audit_covering(index);
    if covering > 0 {
        return Err(Failure::Audit(format!(
            "{covering} representatives outside their radius"
        )));
    }
    let ub = audit_ub_soundness(index, queries);
    if ub.violations > 0 {
        return Err(Failure::Audit(format!(
            "{} bound violations",
            ub.violations
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(&cli)?;
    let seed = cfg.workload.seed;
    match &cli.command {
        Command::Chunk {
            input,
            min_len,
            max_len,
        } => {
            let mut policy = cfg.policy.clone();
            policy.min_len = min_len.unwrap_or(policy.min_len);
            policy.max_len = max_len.unwrap_or(policy.max_len);
            policy.validate()?;
            let tokens = ingest_text(input, cfg.workload.d, seed)?;
            let spans = segment(&tokens, &policy)?;
            let rows: Vec<_> = spans
                .iter()
                .map(|s| {
                    let text: String = tokens[s.range()].iter().map(|t| t.text.as_str()).collect();
                    json!({
                        "start": s.start,
                        "end": s.end,
                        "boundary_kind": boundary_name(s.boundary_kind),
                        "preview_text": text.chars().take(48).collect::<String>(),
                    })
                })
                .collect();
            print_json(&rows)
        }
        Command::Build(source) => {
            let (tokens, queries) = match (&source.text, &source.tokens) {
                (Some(path), _) => (ingest_text(path, cfg.workload.d, seed)?, Vec::new()),
                (_, Some(path)) => (read_json::<Vec<TokenRecord>>(path)?, Vec::new()),
                _ => {
                    let w = load_workload(
                        &cfg.workload,
                        source.n_tokens.unwrap_or(cfg.workload.n_tokens),
                    )?;
                    (w.tokens, w.queries)
                }
            };
            let spans = segment(&tokens, &cfg.policy)?;
            let index = build_index(&tokens, &spans, &cfg.index)?;
            write_file(
                &cli.out.join("index.json"),
                &serde_json::to_vec(&index).map_err(Error::from)?,
            )?;
            print_json(&index.stats())?;
            audit_index(&index, &queries)
        }
        Command::Query {
            index,
            query,
            budget,
        } => {
            let index: HierarchicalIndex = read_json(index)?;
            let q: Vec<f64> = read_json(query)?;
            audit_index(&index, &[])?;
            let result = retrieve(&index, &q, &budgets(&cfg, budget)?, &[])?;
            print_json(&json!({
                "selected_clusters": result.selected_clusters,
                "active_count": result.active_token_ids.len(),
                "scanned_centroids": result.scanned_centroids,
                "output_vector": result.output,
            }))
        }
        Command::Stream {
            prefill,
            steps,
            blob,
            scope,
            chunking,
            budget,
        } => {
            let budgets = budgets(&cfg, budget)?;
            let spec = cfg.workload.clone();
            let mut generator = ClusteredGenerator::new(&spec)?;
            if let Some(b) = blob {
                if *b >= spec.n_blobs {
                    return Err(Error::InvalidConfig(format!("blob {b} out of range")).into());
                }
            }
            let tokens: Vec<TokenRecord> = (0..*prefill).map(|_| generator.next_token()).collect();
            let config = StreamConfig {
                policy: cfg.policy.clone(),
                chunking: match chunking {
                    Chunking::Structure => DynamicChunking::StructureAware,
                    Chunking::Fixed => DynamicChunking::FixedSize,
                },
                graft_scope: match scope {
                    Scope::Scoped => GraftScope::Scoped,
                    Scope::Full => GraftScope::Full,
                },
                ..StreamConfig::default()
            };
            let mut state = StreamState::prefill(&tokens, &cfg.index, config)?;
            let mut out = BufWriter::new(io::stdout().lock());
            let mut audit_queries = Vec::new();
            let (mut hit_sum, mut jac_sum, mut jac_n) = (0.0, 0.0, 0usize);
            for step in 0..*steps {
                let q = match blob {
                    Some(b) => generator.query_near(*b),
                    None => generator.next_query().0,
                };
                let outcome = state.decode_step(&q, &generator.next_token(), &budgets)?;
                hit_sum += outcome.window_hit;
                if let Some(j) = outcome.jaccard {
                    jac_sum += j;
                    jac_n += 1;
                }
                let line = json!({
                    "step": step,
                    "active_count": outcome.retrieval.active_token_ids.len(),
                    "scanned_centroids": outcome.retrieval.scanned_centroids,
                    "jaccard": outcome.jaccard,
                    "window_hit": outcome.window_hit,
                });
                writeln!(out, "{line}")?;
                if audit_queries.len() < cfg.audit_queries {
                    audit_queries.push(q);
                }
            }
            let summary = json!({
                "summary": {
                    "steps": steps,
                    "tokens": state.index.total_tokens(),
                    "chunks": state.index.chunks.len(),
                    "fine_clusters": state.index.fine.len(),
                    "coarse_units": state.index.coarse.len(),
                    "grafts": state.counters.grafts,
                    "max_distance_evals_per_graft": state.counters.max_distance_evals_per_graft,
                    "mean_window_hit": if *steps > 0 { hit_sum / *steps as f64 } else { 0.0 },
                    "mean_jaccard": if jac_n > 0 { jac_sum / jac_n as f64 } else { 1.0 },
                }
            });
            writeln!(out, "{summary}")?;
            out.flush()?;
            audit_index(&state.index, &audit_queries)
        }
        Command::Bench => {
            let report = run_bench(&cfg)?;
            report.write_to(&cli.out)?;
            println!("{}", cli.out.join("summary.json").display());
            if report.audits_passed {
                Ok(())
            } else {
                Err(Failure::Audit(
                    "invariant audit failed in at least one cell".into(),
                ))
            }
        }
        Command::Export { index } => {
            let index: HierarchicalIndex = read_json(index)?;
            audit_index(&index, &[])?;
            let mut out = BufWriter::new(io::stdout().lock());
            let header: Vec<String> = (0..index.dim()).map(|i| format!("k{i}")).collect();
            writeln!(out, "chunk_id,cluster_id,unit_id,{}", header.join(","))?;
            for (j, chunk) in index.chunks.iter().enumerate() {
                let unit = index.fine[chunk.cluster].unit;
                let key: Vec<String> = chunk.rep_key.iter().map(f64::to_string).collect();
                writeln!(out, "{j},{},{unit},{}", chunk.cluster, key.join(","))?;
            }
            out.flush()?;
            Ok(())
        }
    }
}

fn boundary_name(kind: BoundaryKind) -> String {
    match kind {
        BoundaryKind::Natural(l) => format!("natural_l{l}"),
        BoundaryKind::Forced => "forced".into(),
        BoundaryKind::Tail => "tail".into(),
    }
}
