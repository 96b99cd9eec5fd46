//! Hierarchical retrieval over a streaming key/value cache.
//!
//! Tokens are segmented into boundary-aligned chunks ([`chunker`]), chunk
//! representatives are organised into coarse units and fine clusters with
//! covering radii ([`kv_index`]), queries prune the pyramid with a score upper
//! bound before exact attention ([`retriever`]), and decoding grafts new chunks
//! into the index without re-clustering ([`streamer`]). [`evaluator`] holds the
//! brute-force references and metrics; [`harness`] generates workloads and
//! runs sweeps.

pub mod chunker;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod kv_index;
pub mod retriever;
pub mod streamer;
pub mod vector;

pub use chunker::{
    classify_boundary, segment, BoundaryKind, ChunkPolicy, ChunkSpan, SeparatorTable, TokenRecord,
};
pub use error::{Error, Result};
pub use evaluator::{
    audit_covering, audit_ub_soundness, full_attention, jaccard, oracle_topk_tokens, recall_rate,
    window_hit, MetricReport, StabilityTrace,
};
pub use kv_index::{
    build_index, chunk_representative, index_memory_bytes, spherical_kmeans, Chunk, CoarseUnit,
    FineCluster, HierarchicalIndex, IndexConfig, Pooling, TokenStore,
};
pub use retriever::{
    retrieve, score_upper_bound, select_topk, sparse_attention, Budgets, RetrievalResult,
    SelectionMode,
};
pub use streamer::{DecodeOutcome, GraftReport, GraftScope, StreamConfig, StreamState};
