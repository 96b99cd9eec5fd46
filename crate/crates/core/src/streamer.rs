//! Incremental maintenance during decoding.
//!
//! New tokens wait in a buffer. Once it holds `max_len` tokens the chunker's
//! boundary search picks a leading chunk, which is grafted onto the most
//! similar fine cluster. Cluster centroids follow a count-weighted moving
//! average; coarse centroids stay frozen. Radii only grow, by enough to keep
//! every earlier member covered after the centroid moves.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::chunker::{
    boundary_level, next_split, segment, ChunkPolicy, ChunkSpan, Level, TokenRecord,
};
use crate::error::{Error, Result};
use crate::evaluator::{jaccard, window_hit};
use crate::kv_index::{build_index, chunk_representative, Chunk, HierarchicalIndex, IndexConfig};
use crate::retriever::{retrieve, Budgets, RetrievalResult};
use crate::vector::{add_scaled, distance, dot, normalized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicChunking {
    /// Boundary search inside the buffer, same policy as prefill.
    #[default]
    StructureAware,
    /// Always cut at `max_len`.
    FixedSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraftScope {
    /// Search only the fine clusters of the most similar coarse unit.
    #[default]
    Scoped,
    /// Search every fine cluster.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub policy: ChunkPolicy,
    pub chunking: DynamicChunking,
    pub graft_scope: GraftScope,
    /// History length kept for window-hit rates.
    pub window: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            policy: ChunkPolicy::default(),
            chunking: DynamicChunking::default(),
            graft_scope: GraftScope::default(),
            window: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    id: usize,
    level: Option<Level>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCounters {
    pub grafts: u64,
    pub distance_evals_total: u64,
    pub max_distance_evals_per_graft: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftReport {
    pub chunk_id: usize,
    pub cluster_id: usize,
    pub unit_id: usize,
    /// `|new centroid - old centroid|` of the receiving fine cluster.
    pub centroid_shift: f64,
    pub fine_radius: f64,
    pub coarse_radius: f64,
    /// Centroid similarity computations spent finding the cluster.
    pub distance_evals: u64,
}

/// Everything one decode step produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub output: Vec<f64>,
    pub retrieval: RetrievalResult,
    pub graft: Option<GraftReport>,
    /// Against the previous step; absent on the first step.
    pub jaccard: Option<f64>,
    pub window_hit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub index: HierarchicalIndex,
    pub config: StreamConfig,
    buffer: Vec<Pending>,
    prev_text: Option<String>,
    history: VecDeque<Vec<usize>>,
    pub counters: StreamCounters,
}

impl StreamState {
    /// Start streaming on top of a prefill index. `last_text` is the surface text of
    /// the final prefill token, for separators split across the boundary.
    pub fn new(
        index: HierarchicalIndex,
        config: StreamConfig,
        last_text: Option<String>,
    ) -> Result<Self> {
        config.policy.validate()?;
        if index.fine.is_empty() {
            return Err(Error::EmptyIndex);
        }
        // Tokens stored beyond the chunked prefix start out buffered, unclassified.
        let buffer: Vec<Pending> = (index.indexed_tokens()..index.total_tokens())
            .map(|id| Pending { id, level: None })
            .collect();
        if buffer.len() >= config.policy.max_len {
            return Err(Error::InvalidConfig(format!(
                "{} unindexed tokens exceed the buffer limit",
                buffer.len()
            )));
        }
        Ok(Self {
            index,
            config,
            buffer,
            prev_text: last_text,
            history: VecDeque::new(),
            counters: StreamCounters::default(),
        })
    }

    /// Chunk and index a prompt, then start streaming.
    pub fn prefill(
        tokens: &[TokenRecord],
        index_cfg: &IndexConfig,
        config: StreamConfig,
    ) -> Result<Self> {
        let spans = segment(tokens, &config.policy)?;
        let index = build_index(tokens, &spans, index_cfg)?;
        let last = tokens.last().map(|t| t.text.clone());
        Self::new(index, config, last)
    }

    pub fn buffer_ids(&self) -> Vec<usize> {
        self.buffer.iter().map(|p| p.id).collect()
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn history(&self) -> impl Iterator<Item = &[usize]> {
        self.history.iter().map(Vec::as_slice)
    }

    /// Store a token; once the buffer is full, cut and return its leading chunk.
    /// The returned chunk is not yet part of the index.
    pub fn push_token(&mut self, token: &TokenRecord) -> Result<Option<Chunk>> {
        self.index.store.push(token)?;
        let level = match self.config.chunking {
            DynamicChunking::StructureAware => boundary_level(
                self.prev_text.as_deref(),
                &token.text,
                token.boundary_hint,
                &self.config.policy.separators,
            ),
            DynamicChunking::FixedSize => None,
        };
        self.prev_text = Some(token.text.clone());
        self.buffer.push(Pending {
            id: token.id,
            level,
        });
        if self.buffer.len() < self.config.policy.max_len {
            return Ok(None);
        }

        let levels: Vec<Option<Level>> = self.buffer.iter().map(|p| p.level).collect();
        let (len, boundary_kind) = next_split(&levels, &self.config.policy, false)
            .expect("a full buffer always yields a split");
        let span = ChunkSpan {
            start: self.buffer[0].id,
            end: self.buffer[0].id + len,
            boundary_kind,
        };
        self.buffer.drain(..len);
        let store = &self.index.store;
        let rep_key = chunk_representative(
            span.range().map(|i| store.key(i)),
            self.index.config.pooling,
        )?;
        Ok(Some(Chunk {
            span,
            rep_key,
            cluster: usize::MAX,
        }))
    }

    fn nearest_cluster(&self, rep: &[f64]) -> (usize, u64) {
        let argmax = |ids: &mut dyn Iterator<Item = (usize, &[f64])>| {
            let mut best = (usize::MAX, f64::NEG_INFINITY);
            for (id, c) in ids {
                let s = dot(rep, c);
                if s > best.1 {
                    best = (id, s);
                }
            }
            best.0
        };
        let index = &self.index;
        let full = |evals: u64| {
            let c = argmax(
                &mut index
                    .fine
                    .iter()
                    .enumerate()
                    .map(|(c, f)| (c, f.centroid.as_slice())),
            );
            (c, evals + index.fine.len() as u64)
        };
        match self.config.graft_scope {
            GraftScope::Full => full(0),
            GraftScope::Scoped => {
                let unit = argmax(
                    &mut index
                        .coarse
                        .iter()
                        .enumerate()
                        .map(|(g, u)| (g, u.centroid.as_slice())),
                );
                let p = index.coarse.len() as u64;
                let members = &index.coarse[unit].members;
                if members.is_empty() {
                    return full(p);
                }
                let c = argmax(
                    &mut members
                        .iter()
                        .map(|&c| (c, index.fine[c].centroid.as_slice())),
                );
                (c, p + members.len() as u64)
            }
        }
    }

    /// Attach a chunk emitted by [`push_token`](Self::push_token) to the index.
    pub fn graft_chunk(&mut self, mut chunk: Chunk) -> Result<GraftReport> {
        if self.index.fine.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let (cluster_id, evals) = self.nearest_cluster(&chunk.rep_key);
        let chunk_id = self.index.chunks.len();
        let cluster = &mut self.index.fine[cluster_id];

        let n = cluster.member_count as f64;
        let mut moved = cluster.centroid.clone();
        moved.iter_mut().for_each(|x| *x *= n);
        add_scaled(&mut moved, &chunk.rep_key, 1.0);
        let new_centroid = normalized(moved).unwrap_or_else(|| chunk.rep_key.clone());
        let shift = distance(&new_centroid, &cluster.centroid);
        // Old members sat within r of the old centroid, so within r + shift of the new one.
        cluster.radius = (cluster.radius + shift).max(distance(&chunk.rep_key, &new_centroid));
        cluster.centroid = new_centroid;
        cluster.member_count += 1;
        cluster.token_count += chunk.span.len();
        cluster.members.push(chunk_id);
        let fine_radius = cluster.radius;
        let unit_id = cluster.unit;

        let unit = &mut self.index.coarse[unit_id];
        unit.radius = unit.radius.max(distance(&chunk.rep_key, &unit.centroid));
        let coarse_radius = unit.radius;

        chunk.cluster = cluster_id;
        self.index.chunks.push(chunk);

        self.counters.grafts += 1;
        self.counters.distance_evals_total += evals;
        self.counters.max_distance_evals_per_graft =
            self.counters.max_distance_evals_per_graft.max(evals);

        Ok(GraftReport {
            chunk_id,
            cluster_id,
            unit_id,
            centroid_shift: shift,
            fine_radius,
            coarse_radius,
            distance_evals: evals,
        })
    }

    /// Push a token and graft whatever chunk it completes.
    pub fn ingest(&mut self, token: &TokenRecord) -> Result<Option<GraftReport>> {
        match self.push_token(token)? {
            Some(chunk) => self.graft_chunk(chunk).map(Some),
            None => Ok(None),
        }
    }

    /// One decode step: retrieve and attend for `q` over everything stored so
    /// far, then absorb the step's own key/value pair.
    pub fn decode_step(
        &mut self,
        q: &[f64],
        token: &TokenRecord,
        budgets: &Budgets,
    ) -> Result<DecodeOutcome> {
        let retrieval = retrieve(&self.index, q, budgets, &self.buffer_ids())?;
        let graft = self.ingest(token)?;

        let current = &retrieval.selected_clusters;
        let jaccard = self.history.back().map(|prev| jaccard(current, prev));
        let window_hit = window_hit(self.history.iter().map(Vec::as_slice), current);
        if self.config.window > 0 {
            if self.history.len() == self.config.window {
                self.history.pop_front();
            }
            self.history.push_back(current.clone());
        }

        Ok(DecodeOutcome {
            output: retrieval.output.clone(),
            retrieval,
            graft,
            jaccard,
            window_hit,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::audit_covering;
    use crate::vector::norm;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalized(v.to_vec()).unwrap()
    }

    fn token(id: usize, key: Vec<f64>) -> TokenRecord {
        let d = key.len();
        TokenRecord::new(id, "", key, vec![id as f64; d])
    }

    fn prefill_state(n: usize) -> StreamState {
        let tokens: Vec<_> = (0..n)
            .map(|i| token(i, unit(&[1.0, (i % 7) as f64 * 0.2, (i % 3) as f64 * 0.1])))
            .collect();
        StreamState::prefill(&tokens, &IndexConfig::default(), StreamConfig::default()).unwrap()
    }

    #[test]
    fn push_below_max_returns_nothing() {
        let mut s = prefill_state(64);
        for i in 0..3 {
            assert!(s
                .push_token(&token(64 + i, unit(&[1.0, 0.0, 0.0])))
                .unwrap()
                .is_none());
        }
        assert_eq!(s.buffer_len(), 3);
    }

    #[test]
    fn full_buffer_emits_one_chunk() {
        let mut s = prefill_state(64);
        let mut emitted = None;
        for i in 0..16 {
            let mut t = token(64 + i, unit(&[1.0, 0.5, 0.0]));
            if i == 10 {
                t.boundary_hint = Some(2);
            }
            emitted = s.push_token(&t).unwrap();
            if i < 15 {
                assert!(emitted.is_none());
            }
        }
        let chunk = emitted.unwrap();
        assert_eq!((chunk.span.start, chunk.span.end), (64, 75));
        assert_eq!(s.buffer_len(), 5);
        assert!((norm(&chunk.rep_key) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separator_free_stream_forces_sixteen() {
        let mut s = prefill_state(64);
        let mut grafts = 0;
        for i in 0..160 {
            if let Some(report) = s
                .ingest(&token(64 + i, unit(&[1.0, i as f64 * 0.01, 0.2])))
                .unwrap()
            {
                grafts += 1;
                let span = s.index.chunks[report.chunk_id].span;
                assert_eq!(span.len(), 16);
            }
        }
        assert_eq!(grafts, 10);
        assert_eq!(s.buffer_len(), 0);
    }

    #[test]
    fn rejects_out_of_order_ids() {
        let mut s = prefill_state(20);
        assert!(matches!(
            s.push_token(&token(99, unit(&[1.0, 0.0, 0.0]))),
            Err(Error::NonSequentialId {
                expected: 20,
                got: 99
            })
        ));
    }

    #[test]
    fn graft_of_centroid_direction_changes_nothing() {
        let mut s = prefill_state(64);
        let c = 0;
        let before = s.index.fine[c].clone();
        let chunk = Chunk {
            span: ChunkSpan {
                start: 64,
                end: 64,
                boundary_kind: crate::chunker::BoundaryKind::Forced,
            },
            rep_key: before.centroid.clone(),
            cluster: usize::MAX,
        };
        s.config.graft_scope = GraftScope::Full;
        let report = s.graft_chunk(chunk).unwrap();
        // Any cluster whose centroid equals the rep would do; cluster 0's centroid is the best match.
        assert_eq!(report.cluster_id, c);
        let after = &s.index.fine[c];
        assert!(distance(&after.centroid, &before.centroid) < 1e-12);
        assert!((after.radius - before.radius).abs() < 1e-12);
        assert_eq!(after.member_count, before.member_count + 1);
    }

    #[test]
    fn far_graft_covers_new_member() {
        let mut s = prefill_state(64);
        let far = unit(&[-1.0, 0.0, 1.0]);
        let chunk = Chunk {
            span: ChunkSpan {
                start: 64,
                end: 64,
                boundary_kind: crate::chunker::BoundaryKind::Forced,
            },
            rep_key: far.clone(),
            cluster: usize::MAX,
        };
        let report = s.graft_chunk(chunk).unwrap();
        let cl = &s.index.fine[report.cluster_id];
        assert!(report.fine_radius >= distance(&far, &cl.centroid) - 1e-12);
        assert_eq!(audit_covering(&s.index), 0);
    }
}
