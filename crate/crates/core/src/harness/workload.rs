//! Seeded synthetic key/value/query streams with clustered key geometry.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chunker::TokenRecord;
use crate::error::{Error, Result};
use crate::vector::normalized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    #[default]
    ClusteredSynthetic,
    TextCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub n_tokens: usize,
    pub d: usize,
    pub n_blobs: usize,
    /// Inverse spread of keys around their blob center; `inf` puts every key on it.
    pub blob_concentration: f64,
    pub query_count: usize,
    /// Probability that a query aims at a blob rather than a random direction.
    pub query_locality: f64,
    pub seed: u64,
    /// Spread of per-topic centers relative to token spread. Topics are runs of
    /// consecutive chunks drawn around one blob center.
    pub topic_spread: f64,
    /// Probability of moving to a fresh topic at each boundary.
    pub topic_switch: f64,
    /// Mean spacing of explicit boundary hints; actual gaps vary by ±2.
    pub boundary_every: usize,
    pub query_norm: f64,
    /// Source file for `text_corpus` workloads.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_path: Option<PathBuf>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            kind: WorkloadKind::ClusteredSynthetic,
            n_tokens: 32 * 1024,
            d: 64,
            n_blobs: 16,
            blob_concentration: 2.0,
            query_count: 100,
            query_locality: 0.9,
            seed: 0,
            topic_spread: 1.0,
            topic_switch: 0.3,
            boundary_every: 12,
            query_norm: 4.0,
            text_path: None,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n_tokens == 0 {
            return bad("n_tokens must be at least 1");
        }
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if self.n_blobs == 0 {
            return bad("n_blobs must be at least 1");
        }
        if self.blob_concentration.is_nan() || self.blob_concentration <= 0.0 {
            return bad("blob_concentration must be positive");
        }
        for (name, p) in [
            ("query_locality", self.query_locality),
            ("topic_switch", self.topic_switch),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.topic_spread.is_nan()
            || self.topic_spread < 0.0
            || self.query_norm.is_nan()
            || self.query_norm <= 0.0
        {
            return bad("topic_spread must be non-negative and query_norm positive");
        }
        if self.boundary_every < 3 {
            return bad("boundary_every must be at least 3");
        }
        if self.kind == WorkloadKind::TextCorpus && self.text_path.is_none() {
            return bad("text_corpus workloads need text_path");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub tokens: Vec<TokenRecord>,
    pub queries: Vec<Vec<f64>>,
    /// Target blob of each query, `None` for uniform queries.
    pub query_blobs: Vec<Option<usize>>,
    pub centers: Vec<Vec<f64>>,
}

/// Stateful token and query source; continues a stream past the prefill.
#[derive(Debug, Clone)]
pub struct ClusteredGenerator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    query_rng: ChaCha8Rng,
    centers: Vec<Vec<f64>>,
    topic: Vec<f64>,
    until_boundary: usize,
    next_id: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    let s = scale / (d as f64).sqrt();
    (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * s)
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        if let Some(v) = normalized(gaussian(rng, d, 1.0)) {
            return v;
        }
    }
}

fn perturb(center: &[f64], noise: Vec<f64>) -> Vec<f64> {
    let v: Vec<f64> = center.iter().zip(noise).map(|(c, n)| c + n).collect();
    normalized(v).unwrap_or_else(|| center.to_vec())
}

impl ClusteredGenerator {
    pub fn new(spec: &WorkloadSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers: Vec<Vec<f64>> = (0..spec.n_blobs)
            .map(|_| random_unit(&mut rng, spec.d))
            .collect();
        let query_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5175_6572_7921);
        let mut generator = Self {
            spec: spec.clone(),
            rng,
            query_rng,
            centers,
            topic: Vec::new(),
            until_boundary: 0,
            next_id: 0,
        };
        generator.new_topic();
        generator.until_boundary = generator.gap();
        Ok(generator)
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    fn spread(&self) -> f64 {
        1.0 / self.spec.blob_concentration
    }

    fn new_topic(&mut self) {
        let blob = self.rng.random_range(0..self.spec.n_blobs);
        let scale = self.spec.topic_spread * self.spread();
        let noise = gaussian(&mut self.rng, self.spec.d, scale);
        self.topic = perturb(&self.centers[blob], noise);
    }

    fn gap(&mut self) -> usize {
        let every = self.spec.boundary_every;
        self.rng.random_range(every - 2..=every + 2)
    }

    pub fn next_token(&mut self) -> TokenRecord {
        let d = self.spec.d;
        let scale = self.spread();
        let noise = gaussian(&mut self.rng, d, scale);
        let key = perturb(&self.topic, noise);
        let value = gaussian(&mut self.rng, d, (d as f64).sqrt());
        let mut token = TokenRecord::new(self.next_id, "", key, value);
        self.next_id += 1;
        self.until_boundary -= 1;
        if self.until_boundary == 0 {
            token.boundary_hint = Some(2);
            self.until_boundary = self.gap();
            if self.rng.random_bool(self.spec.topic_switch) {
                self.new_topic();
            }
        }
        token
    }

    /// Query aimed at `blob`.
    pub fn query_near(&mut self, blob: usize) -> Vec<f64> {
        let scale = self.spec.topic_spread * self.spread();
        let noise = gaussian(&mut self.query_rng, self.spec.d, scale);
        let dir = perturb(&self.centers[blob], noise);
        dir.into_iter().map(|x| x * self.spec.query_norm).collect()
    }

    pub fn next_query(&mut self) -> (Vec<f64>, Option<usize>) {
        if self.query_rng.random_bool(self.spec.query_locality) {
            let blob = self.query_rng.random_range(0..self.spec.n_blobs);
            (self.query_near(blob), Some(blob))
        } else {
            let dir = random_unit(&mut self.query_rng, self.spec.d);
            (
                dir.into_iter().map(|x| x * self.spec.query_norm).collect(),
                None,
            )
        }
    }
}

/// Generate `n_tokens` tokens and `query_count` queries from a seeded clustered model.
pub fn gen_clustered_workload(spec: &WorkloadSpec) -> Result<Workload> {
    let mut generator = ClusteredGenerator::new(spec)?;
    let tokens: Vec<TokenRecord> = (0..spec.n_tokens).map(|_| generator.next_token()).collect();
    let (queries, query_blobs) = (0..spec.query_count)
        .map(|_| generator.next_query())
        .unzip();
    Ok(Workload {
        tokens,
        queries,
        query_blobs,
        centers: generator.centers,
    })
}
