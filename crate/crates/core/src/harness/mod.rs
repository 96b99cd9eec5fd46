//! Workloads, text ingestion and experiment sweeps.

pub mod bench;
pub mod text;
pub mod workload;

pub use bench::{run_bench, BenchReport, CellReport, RunConfig};
pub use text::{ingest_text, tokens_from_text};
pub use workload::{
    gen_clustered_workload, ClusteredGenerator, Workload, WorkloadKind, WorkloadSpec,
};
