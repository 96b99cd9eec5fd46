//! Three-tier index over chunk representative keys: coarse units own fine
//! clusters, fine clusters own chunks. Every node stores a centroid and a
//! covering radius measured over the chunk representatives beneath it.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunker::{check_tiling, ChunkSpan, TokenRecord};
use crate::error::{Error, Result};
use crate::vector::{add_scaled, distance, dot, normalized};

/// Flat key/value storage for every token seen so far, indexed or buffered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStore {
    dim: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl TokenStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            keys: Vec::new(),
            values: Vec::new(),
        })
    }

    pub fn from_tokens(tokens: &[TokenRecord]) -> Result<Self> {
        let first = tokens.first().ok_or(Error::EmptyStream)?;
        let mut store = Self::new(first.key.len())?;
        store.keys.reserve(tokens.len() * store.dim);
        store.values.reserve(tokens.len() * store.dim);
        for tok in tokens {
            store.push(tok)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, token: &TokenRecord) -> Result<()> {
        if token.id != self.len() {
            return Err(Error::NonSequentialId {
                expected: self.len(),
                got: token.id,
            });
        }
        for v in [&token.key, &token.value] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        self.keys.extend_from_slice(&token.key);
        self.values.extend_from_slice(&token.value);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, id: usize) -> &[f64] {
        &self.keys[id * self.dim..(id + 1) * self.dim]
    }

    pub fn value(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn keys(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.keys.chunks_exact(self.dim)
    }

    pub fn values(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub avg_chunks_per_cluster: f64,
    pub max_coarse_units: usize,
    pub kmeans_iters: usize,
    pub pooling: Pooling,
    pub seed: u64,
    /// Bytes per stored element for memory accounting (2 mirrors fp16 caches).
    pub element_bytes: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            avg_chunks_per_cluster: 2.0,
            max_coarse_units: 64,
            kmeans_iters: 10,
            pooling: Pooling::Mean,
            seed: 0,
            element_bytes: 2,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.avg_chunks_per_cluster > 0.0 && self.avg_chunks_per_cluster.is_finite()) {
            return Err(Error::InvalidConfig(
                "avg_chunks_per_cluster must be positive".into(),
            ));
        }
        if self.max_coarse_units == 0 || self.kmeans_iters == 0 || self.element_bytes == 0 {
            return Err(Error::InvalidConfig(
                "max_coarse_units, kmeans_iters and element_bytes must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of fine clusters for `chunks` chunks.
    pub fn fine_count(&self, chunks: usize) -> usize {
        let l = (chunks as f64 / self.avg_chunks_per_cluster).ceil() as usize;
        l.clamp(1, chunks.max(1))
    }

    /// Number of coarse units for `clusters` fine clusters: `ceil(sqrt(L))`, capped.
    pub fn coarse_count(&self, clusters: usize) -> usize {
        let p = (clusters as f64).sqrt().ceil() as usize;
        p.clamp(1, self.max_coarse_units).min(clusters.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub span: ChunkSpan,
    pub rep_key: Vec<f64>,
    pub cluster: usize,
}

impl Chunk {
    pub fn member_count(&self) -> usize {
        self.span.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineCluster {
    pub centroid: Vec<f64>,
    pub radius: f64,
    /// Chunk ids.
    pub members: Vec<usize>,
    /// Number of member chunks; drives the streaming moving average.
    pub member_count: usize,
    pub token_count: usize,
    pub unit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseUnit {
    pub centroid: Vec<f64>,
    pub radius: f64,
    /// Fine cluster ids.
    pub members: Vec<usize>,
}

/// Work counters recorded while building.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    /// Centroid recomputations across both k-means runs.
    pub centroid_updates: u64,
    /// Point-centroid similarity evaluations across both k-means runs.
    pub similarity_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalIndex {
    pub config: IndexConfig,
    pub store: TokenStore,
    pub chunks: Vec<Chunk>,
    pub fine: Vec<FineCluster>,
    pub coarse: Vec<CoarseUnit>,
    pub build_stats: BuildStats,
}

impl HierarchicalIndex {
    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    /// Tokens currently covered by chunks.
    pub fn indexed_tokens(&self) -> usize {
        self.chunks.last().map_or(0, |c| c.span.end)
    }

    pub fn total_tokens(&self) -> usize {
        self.store.len()
    }

    /// Chunk ids under a coarse unit.
    pub fn unit_chunks(&self, unit: usize) -> impl Iterator<Item = usize> + '_ {
        self.coarse[unit]
            .members
            .iter()
            .flat_map(move |&c| self.fine[c].members.iter().copied())
    }

    pub fn stats(&self) -> IndexStats {
        let mean = |it: &mut dyn Iterator<Item = f64>, n: usize| {
            if n == 0 {
                0.0
            } else {
                it.sum::<f64>() / n as f64
            }
        };
        let mem = index_memory_bytes(self);
        IndexStats {
            tokens: self.total_tokens(),
            chunks: self.chunks.len(),
            fine_clusters: self.fine.len(),
            coarse_units: self.coarse.len(),
            mean_radius_fine: mean(&mut self.fine.iter().map(|c| c.radius), self.fine.len()),
            mean_radius_coarse: mean(&mut self.coarse.iter().map(|u| u.radius), self.coarse.len()),
            index_bytes: mem.index_bytes,
            kv_bytes: mem.kv_bytes,
            ratio: mem.ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub tokens: usize,
    #[serde(rename = "M")]
    pub chunks: usize,
    #[serde(rename = "L")]
    pub fine_clusters: usize,
    #[serde(rename = "P")]
    pub coarse_units: usize,
    pub mean_radius_fine: f64,
    pub mean_radius_coarse: f64,
    pub index_bytes: u64,
    pub kv_bytes: u64,
    pub ratio: f64,
}

/// Pool token keys into a unit-norm chunk representative.
pub fn chunk_representative<'a, I>(keys: I, pooling: Pooling) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = keys.into_iter();
    let first = iter.next().ok_or(Error::EmptyKeys)?;
    let dim = first.len();
    let mut acc = first.to_vec();
    let mut count = 1usize;
    for key in iter {
        if key.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: key.len(),
            });
        }
        match pooling {
            Pooling::Mean => add_scaled(&mut acc, key, 1.0),
            Pooling::Max => acc.iter_mut().zip(key).for_each(|(a, &k)| *a = a.max(k)),
        }
        count += 1;
    }
    if pooling == Pooling::Mean {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    normalized(acc).ok_or(Error::ZeroNorm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// `sum_i point_i . centroid(assignment_i)` after each update round.
    pub objective: Vec<f64>,
    pub centroid_updates: u64,
    pub similarity_evals: u64,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let s = dot(point, c);
        if s > best.1 {
            best = (j, s);
        }
    }
    best
}

/// Spherical k-means with inner-product assignment.
///
/// Each of `iters` rounds assigns every point to its most similar centroid
/// (ties to the smaller id), refills empty clusters by moving over the point
/// least similar to its own centroid, then resets every centroid to the
/// normalized mean of its points.
pub fn spherical_kmeans(
    points: &[Vec<f64>],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<KMeansResult> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::InvalidClusterCount { k, points: n });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<Vec<f64>> = init.iter().map(|&i| points[i].clone()).collect();
    let mut assignment = vec![0usize; n];
    let mut sims = vec![0.0f64; n];
    let mut objective = Vec::with_capacity(iters);
    let mut centroid_updates = 0u64;
    let mut similarity_evals = 0u64;

    for _ in 0..iters.max(1) {
        for (i, p) in points.iter().enumerate() {
            let (j, s) = nearest(p, &centroids);
            assignment[i] = j;
            sims[i] = s;
        }
        similarity_evals += (n * k) as u64;
        repair_empty(points, &mut centroids, &mut assignment, &mut sims);

        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &j) in points.iter().zip(&assignment) {
            add_scaled(&mut sums[j], p, 1.0);
        }
        for (c, sum) in centroids.iter_mut().zip(sums) {
            // A cancelling mean leaves every direction equally good; keep the old one.
            if let Some(unit) = normalized(sum) {
                *c = unit;
            }
        }
        centroid_updates += k as u64;
        objective.push(
            points
                .iter()
                .zip(&assignment)
                .map(|(p, &j)| dot(p, &centroids[j]))
                .sum(),
        );
    }

    Ok(KMeansResult {
        centroids,
        assignment,
        objective,
        centroid_updates,
        similarity_evals,
    })
}

fn repair_empty(
    points: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignment: &mut [usize],
    sims: &mut [f64],
) {
    let k = centroids.len();
    let mut counts = vec![0usize; k];
    for &j in assignment.iter() {
        counts[j] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..points.len() {
            if counts[assignment[i]] > 1 && donor.is_none_or(|d| sims[i] < sims[d]) {
                donor = Some(i);
            }
        }
        // k <= n guarantees some cluster holds two or more points.
        let i = donor.expect("k <= n leaves a donor");
        counts[assignment[i]] -= 1;
        counts[empty] += 1;
        assignment[i] = empty;
        centroids[empty] = points[i].clone();
        sims[i] = dot(&points[i], &centroids[empty]);
    }
}

/// Build the coarse/fine/chunk pyramid over `tokens` segmented by `spans`.
pub fn build_index(
    tokens: &[TokenRecord],
    spans: &[ChunkSpan],
    cfg: &IndexConfig,
) -> Result<HierarchicalIndex> {
    if spans.is_empty() {
        return Err(Error::BadSpans("no spans".into()));
    }
    cfg.validate()?;
    check_tiling(spans, tokens.len())?;
    let store = TokenStore::from_tokens(tokens)?;
    build_from_store(store, spans, cfg)
}

/// Build over an existing store whose first `spans.last().end` tokens are chunked.
pub fn build_from_store(
    store: TokenStore,
    spans: &[ChunkSpan],
    cfg: &IndexConfig,
) -> Result<HierarchicalIndex> {
    if spans.is_empty() {
        return Err(Error::BadSpans("no spans".into()));
    }
    cfg.validate()?;
    let covered = spans.last().map_or(0, |s| s.end);
    if covered > store.len() {
        return Err(Error::BadSpans(format!(
            "spans cover {covered} tokens but the store holds {}",
            store.len()
        )));
    }
    check_tiling(spans, covered)?;

    let reps = spans
        .iter()
        .map(|s| chunk_representative(s.range().map(|i| store.key(i)), cfg.pooling))
        .collect::<Result<Vec<_>>>()?;

    let l = cfg.fine_count(reps.len());
    let fine_km = spherical_kmeans(&reps, l, cfg.kmeans_iters, cfg.seed)?;
    let p = cfg.coarse_count(l);
    let coarse_km = spherical_kmeans(
        &fine_km.centroids,
        p,
        cfg.kmeans_iters,
        cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
    )?;

    let mut fine: Vec<FineCluster> = fine_km
        .centroids
        .into_iter()
        .enumerate()
        .map(|(c, centroid)| FineCluster {
            centroid,
            radius: 0.0,
            members: Vec::new(),
            member_count: 0,
            token_count: 0,
            unit: coarse_km.assignment[c],
        })
        .collect();
    let mut coarse: Vec<CoarseUnit> = coarse_km
        .centroids
        .into_iter()
        .map(|centroid| CoarseUnit {
            centroid,
            radius: 0.0,
            members: Vec::new(),
        })
        .collect();
    for (c, cluster) in fine.iter().enumerate() {
        coarse[cluster.unit].members.push(c);
    }

    let mut chunks = Vec::with_capacity(spans.len());
    for (j, (span, rep_key)) in spans.iter().zip(reps).enumerate() {
        let c = fine_km.assignment[j];
        let cluster = &mut fine[c];
        cluster.radius = cluster.radius.max(distance(&rep_key, &cluster.centroid));
        cluster.members.push(j);
        cluster.member_count += 1;
        cluster.token_count += span.len();
        let unit = &mut coarse[cluster.unit];
        unit.radius = unit.radius.max(distance(&rep_key, &unit.centroid));
        chunks.push(Chunk {
            span: *span,
            rep_key,
            cluster: c,
        });
    }

    Ok(HierarchicalIndex {
        config: cfg.clone(),
        store,
        chunks,
        fine,
        coarse,
        build_stats: BuildStats {
            centroid_updates: fine_km.centroid_updates + coarse_km.centroid_updates,
            similarity_evals: fine_km.similarity_evals + coarse_km.similarity_evals,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub index_bytes: u64,
    pub kv_bytes: u64,
    pub ratio: f64,
}

/// Index footprint next to the raw K/V tensors, both at `element_bytes` per element.
///
/// Index elements: chunk representatives, fine and coarse centroids, one
/// radius per node, and the member id lists of every fine cluster and coarse unit.
pub fn index_memory_bytes(index: &HierarchicalIndex) -> MemoryReport {
    let d = index.dim() as u64;
    let m = index.chunks.len() as u64;
    let l = index.fine.len() as u64;
    let p = index.coarse.len() as u64;
    let width = index.config.element_bytes as u64;
    let elements = m * d + l * (d + 1) + p * (d + 1) + m + l;
    let index_bytes = elements * width;
    let kv_bytes = 2 * index.total_tokens() as u64 * d * width;
    MemoryReport {
        index_bytes,
        kv_bytes,
        ratio: if kv_bytes == 0 {
            0.0
        } else {
            index_bytes as f64 / kv_bytes as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::BoundaryKind;
    use crate::vector::norm;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn representative_of_identical_keys() {
        let k = unit(&[1.0, 2.0, 2.0]);
        let rep = chunk_representative([k.as_slice(); 3], Pooling::Mean).unwrap();
        for (a, b) in rep.iter().zip(&k) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn representative_of_orthonormal_pair() {
        let e1 = [1.0, 0.0];
        let e2 = [0.0, 1.0];
        let rep = chunk_representative([&e1[..], &e2[..]], Pooling::Mean).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((rep[0] - h).abs() < 1e-12 && (rep[1] - h).abs() < 1e-12);
    }

    #[test]
    fn representative_errors() {
        let e1 = [1.0, 0.0];
        let m1 = [-1.0, 0.0];
        assert!(matches!(
            chunk_representative([&e1[..], &m1[..]], Pooling::Mean),
            Err(Error::ZeroNorm)
        ));
        assert!(matches!(
            chunk_representative(std::iter::empty::<&[f64]>(), Pooling::Mean),
            Err(Error::EmptyKeys)
        ));
    }

    #[test]
    fn max_pooling_takes_componentwise_max() {
        let a = [1.0, -2.0];
        let b = [-1.0, 0.0];
        let rep = chunk_representative([&a[..], &b[..]], Pooling::Max).unwrap();
        assert!((rep[0] - 1.0).abs() < 1e-12 && rep[1].abs() < 1e-12);
    }

    #[test]
    fn kmeans_single_cluster_is_normalized_mean() {
        let pts = vec![unit(&[1.0, 0.1]), unit(&[0.2, 1.0]), unit(&[1.0, 1.0])];
        let km = spherical_kmeans(&pts, 1, 10, 3).unwrap();
        let mut mean = vec![0.0; 2];
        for p in &pts {
            add_scaled(&mut mean, p, 1.0);
        }
        let expected = normalized(mean).unwrap();
        assert!(distance(&km.centroids[0], &expected) < 1e-12);
        assert!(km.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn kmeans_k_equals_n_is_bijective() {
        let pts: Vec<_> = (0..6)
            .map(|i| unit(&[(i as f64).cos(), (i as f64).sin(), 0.3]))
            .collect();
        let km = spherical_kmeans(&pts, 6, 10, 1).unwrap();
        let mut seen = km.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        for (i, &c) in km.assignment.iter().enumerate() {
            assert!(distance(&pts[i], &km.centroids[c]) < 1e-12);
        }
    }

    #[test]
    fn kmeans_repairs_duplicates() {
        let p = unit(&[1.0, 0.0]);
        let pts = vec![p.clone(), p.clone(), p];
        let km = spherical_kmeans(&pts, 3, 5, 0).unwrap();
        let mut seen = km.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let pts = vec![unit(&[1.0, 0.0])];
        assert!(spherical_kmeans(&pts, 0, 1, 0).is_err());
        assert!(spherical_kmeans(&pts, 2, 1, 0).is_err());
    }

    #[test]
    fn cluster_count_rules() {
        let cfg = IndexConfig::default();
        assert_eq!(cfg.fine_count(100), 50);
        assert_eq!(cfg.coarse_count(50), 8);
        assert_eq!(cfg.fine_count(1), 1);
        assert_eq!(cfg.coarse_count(1), 1);
        assert_eq!(cfg.coarse_count(1_000_000), 64);
    }

    #[test]
    fn single_chunk_index() {
        let tokens: Vec<_> = (0..5)
            .map(|i| TokenRecord::new(i, "", unit(&[1.0, i as f64 * 0.1]), vec![0.0, 1.0]))
            .collect();
        let spans = [ChunkSpan {
            start: 0,
            end: 5,
            boundary_kind: BoundaryKind::Tail,
        }];
        let index = build_index(&tokens, &spans, &IndexConfig::default()).unwrap();
        assert_eq!(
            (index.chunks.len(), index.fine.len(), index.coarse.len()),
            (1, 1, 1)
        );
        assert!(index.fine[0].radius < 1e-12);
        assert!(index.coarse[0].radius < 1e-12);
        assert!((norm(&index.chunks[0].rep_key) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn build_rejects_empty_and_gappy_spans() {
        let tokens: Vec<_> = (0..4)
            .map(|i| TokenRecord::new(i, "", vec![1.0, 0.0], vec![0.0, 1.0]))
            .collect();
        assert!(build_index(&tokens, &[], &IndexConfig::default()).is_err());
        let gap = [ChunkSpan {
            start: 0,
            end: 3,
            boundary_kind: BoundaryKind::Tail,
        }];
        assert!(build_index(&tokens, &gap, &IndexConfig::default()).is_err());
    }

    #[test]
    fn memory_formula_single_chunk() {
        let d = 128;
        let tokens: Vec<_> = (0..10)
            .map(|i| {
                let mut k = vec![0.0; d];
                k[i % d] = 1.0;
                TokenRecord::new(i, "", k, vec![0.5; d])
            })
            .collect();
        let spans = [ChunkSpan {
            start: 0,
            end: 10,
            boundary_kind: BoundaryKind::Tail,
        }];
        let index = build_index(&tokens, &spans, &IndexConfig::default()).unwrap();
        let mem = index_memory_bytes(&index);
        // rep key (128) + fine centroid/radius (129) + coarse centroid/radius (129) + ids (2)
        assert_eq!(mem.index_bytes, (128 + 129 + 129 + 2) * 2);
        assert_eq!(mem.kv_bytes, 2 * 10 * 128 * 2);
        assert!((mem.ratio - 776.0 / 5120.0).abs() < 1e-15);
    }
}
