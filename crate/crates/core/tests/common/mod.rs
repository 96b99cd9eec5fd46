#![allow(dead_code)]

use hkv::chunker::{BoundaryKind, ChunkSpan, TokenRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    unit(random_vec(rng, d))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Tokens whose keys sit near one of `centers`; a new center is drawn every 16 tokens.
pub fn blob_tokens(seed: u64, centers: &[Vec<f64>], n: usize, noise: f64) -> Vec<TokenRecord> {
    let mut r = rng(seed);
    let d = centers[0].len();
    let mut out = Vec::with_capacity(n);
    let mut blob = 0;
    for id in 0..n {
        if id % 16 == 0 {
            blob = r.random_range(0..centers.len());
        }
        let key: Vec<f64> = centers[blob]
            .iter()
            .map(|c| c + noise * r.random_range(-1.0..1.0))
            .collect();
        let value = random_vec(&mut r, d);
        out.push(TokenRecord::new(id, "", unit(key), value));
    }
    out
}

/// Fixed spans of `len` tokens, the last one shorter.
pub fn fixed_spans(n: usize, len: usize) -> Vec<ChunkSpan> {
    (0..n)
        .step_by(len)
        .map(|start| ChunkSpan {
            start,
            end: (start + len).min(n),
            boundary_kind: BoundaryKind::Forced,
        })
        .collect()
}

/// Textbook softmax attention with 1/sqrt(d) scaling.
pub fn naive_attention(q: &[f64], keys: &[&[f64]], values: &[&[f64]]) -> Vec<f64> {
    let scale = 1.0 / (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; values[0].len()];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w / total * x;
        }
    }
    out
}
