//! Plain-text ingestion: whitespace tokenization with seeded synthetic keys.
//!
//! A token is a run of non-whitespace characters together with the whitespace
//! that follows it, so separators such as `"\n\n"` stay attached to the token
//! before the break. Keys mix a per-word direction with a per-paragraph bias
//! so tokens of one paragraph cluster together.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chunker::TokenRecord;
use crate::error::{Error, Result};
use crate::vector::normalized;

/// Weight of the paragraph direction relative to the word direction.
pub const PARAGRAPH_BIAS: f64 = 1.5;

pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start = 0;
    let mut in_space = text.starts_with(char::is_whitespace);
    for (i, ch) in text.char_indices() {
        let space = ch.is_whitespace();
        if in_space && !space && i > start {
            tokens.push(&text[start..i]);
            start = i;
        }
        in_space = space;
    }
    if start < text.len() {
        tokens.push(&text[start..]);
    }
    tokens
}

fn fnv1a(seed: u64, tag: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in tag {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn seeded_gaussian(seed: u64, d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn seeded_unit(seed: u64, d: usize) -> Vec<f64> {
    normalized(seeded_gaussian(seed, d)).expect("gaussian draw is non-zero")
}

pub fn tokens_from_text(text: &str, d: usize, seed: u64) -> Result<Vec<TokenRecord>> {
    if d < 2 {
        return Err(Error::InvalidConfig("d must be at least 2".into()));
    }
    let pieces = tokenize(text);
    if pieces.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut paragraph = 0u64;
    let mut out = Vec::with_capacity(pieces.len());
    for (id, piece) in pieces.into_iter().enumerate() {
        let word = piece.trim_end();
        let word_dir = seeded_unit(fnv1a(seed, word.as_bytes()), d);
        let para_dir = seeded_unit(fnv1a(seed ^ 0x7061_7261, &paragraph.to_le_bytes()), d);
        let key: Vec<f64> = word_dir
            .iter()
            .zip(&para_dir)
            .map(|(w, p)| w + PARAGRAPH_BIAS * p)
            .collect();
        let key = normalized(key).unwrap_or(para_dir);
        let value = seeded_gaussian(fnv1a(seed ^ 0x76616c, &(id as u64).to_le_bytes()), d);
        out.push(TokenRecord::new(id, piece, key, value));
        // Blank line: two newlines in the trailing whitespace.
        if piece[word.len()..].matches('\n').count() >= 2 {
            paragraph += 1;
        }
    }
    Ok(out)
}

/// Read a UTF-8 file and tokenize it. Keys have dimension `d`.
pub fn ingest_text(path: impl AsRef<Path>, d: usize, seed: u64) -> Result<Vec<TokenRecord>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text =
        String::from_utf8(bytes).map_err(|_| Error::InvalidUtf8(path.display().to_string()))?;
    tokens_from_text(&text, d, seed)
}
