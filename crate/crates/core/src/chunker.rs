//! Structure-aware segmentation of a token stream into variable-length chunks.
//!
//! Tokens accumulate greedily until a chunk reaches `min_len`; the split point
//! is then the strongest separator found among positions `min_len..=max_len`
//! (counted from the chunk start), rightmost on ties. Without any candidate the
//! chunk is cut at exactly `max_len`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator priority. 1 is the strongest (structural), 4 the weakest (whitespace).
pub type Level = u8;

/// One element of a token stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: usize,
    #[serde(default)]
    pub text: String,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    /// Explicit boundary priority for tokens without surface text (synthetic workloads).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_hint: Option<Level>,
}

impl TokenRecord {
    pub fn new(id: usize, text: impl Into<String>, key: Vec<f64>, value: Vec<f64>) -> Self {
        Self {
            id,
            text: text.into(),
            key,
            value,
            boundary_hint: None,
        }
    }

    pub fn with_hint(mut self, level: Level) -> Self {
        self.boundary_hint = Some(level);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatorLevel {
    pub level: Level,
    pub separators: Vec<String>,
    /// Match against the raw text instead of the whitespace-stripped forms.
    /// Set for the whitespace level.
    #[serde(default)]
    pub raw_suffix: bool,
}

/// Separators grouped by priority, strongest level first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparatorTable {
    pub levels: Vec<SeparatorLevel>,
}

impl Default for SeparatorTable {
    fn default() -> Self {
        fn level(level: Level, seps: &[&str], raw_suffix: bool) -> SeparatorLevel {
            SeparatorLevel {
                level,
                separators: seps.iter().map(|s| s.to_string()).collect(),
                raw_suffix,
            }
        }
        Self {
            levels: vec![
                level(1, &["\n\n", "---", "***", "```", "}", "]", ">"], false),
                level(2, &[".", "?", "!", "。", "？", "！", "\n"], false),
                level(3, &[",", ";", ":", "，", "；", "：", "、"], false),
                level(4, &[" ", "\t"], true),
            ],
        }
    }
}

impl SeparatorTable {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("separator table is empty".into()));
        }
        for pair in self.levels.windows(2) {
            if pair[0].level >= pair[1].level {
                return Err(Error::InvalidConfig(
                    "separator levels must be strictly increasing".into(),
                ));
            }
        }
        if self.levels.iter().any(|l| l.level == 0) {
            return Err(Error::InvalidConfig("separator levels start at 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkPolicy {
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default)]
    pub separators: SeparatorTable,
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            min_len: 8,
            max_len: 16,
            separators: SeparatorTable::default(),
        }
    }
}

impl ChunkPolicy {
    pub fn new(min_len: usize, max_len: usize) -> Result<Self> {
        let policy = Self {
            min_len,
            max_len,
            ..Self::default()
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig(format!(
                "chunk lengths must satisfy 1 <= min_len <= max_len (got {}..{})",
                self.min_len, self.max_len
            )));
        }
        self.separators.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum BoundaryKind {
    Natural(Level),
    Forced,
    Tail,
}

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub start: usize,
    pub end: usize,
    pub boundary_kind: BoundaryKind,
}

impl ChunkSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

fn strip_blank(text: &str) -> &str {
    text.trim_end_matches([' ', '\t'])
}

/// Priority of the separator that `text` ends with, if any.
///
/// Levels marked `raw_suffix` match the text as-is. Other levels match after
/// stripping trailing spaces/tabs, or after stripping all trailing whitespace,
/// so `"}\n"` still counts as a closing brace.
pub fn classify_boundary(text: &str, table: &SeparatorTable) -> Option<Level> {
    if text.is_empty() {
        return None;
    }
    let blank_stripped = strip_blank(text);
    let ws_stripped = text.trim_end();
    table
        .levels
        .iter()
        .find(|lvl| {
            lvl.separators.iter().any(|sep| {
                if lvl.raw_suffix {
                    text.ends_with(sep.as_str())
                } else {
                    blank_stripped.ends_with(sep.as_str()) || ws_stripped.ends_with(sep.as_str())
                }
            })
        })
        .map(|lvl| lvl.level)
}

/// Multi-character separators split across `prev` and `text`.
fn classify_straddling(prev: &str, text: &str, table: &SeparatorTable) -> Option<Level> {
    let tail = strip_blank(text);
    if tail.is_empty() {
        return None;
    }
    let joined = format!("{prev}{tail}");
    table
        .levels
        .iter()
        .filter(|lvl| !lvl.raw_suffix)
        .find(|lvl| {
            lvl.separators.iter().any(|sep| {
                sep.len() > tail.len() && sep.chars().count() > 1 && joined.ends_with(sep.as_str())
            })
        })
        .map(|lvl| lvl.level)
}

/// Boundary priority of a token given its predecessor's text and an optional hint.
pub fn boundary_level(
    prev_text: Option<&str>,
    text: &str,
    hint: Option<Level>,
    table: &SeparatorTable,
) -> Option<Level> {
    let own = if text.is_empty() {
        None
    } else {
        let direct = classify_boundary(text, table);
        let straddle = prev_text.and_then(|p| classify_straddling(p, text, table));
        match (direct, straddle) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    };
    match (own, hint) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

pub fn boundary_levels(tokens: &[TokenRecord], table: &SeparatorTable) -> Vec<Option<Level>> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let prev = i.checked_sub(1).map(|p| tokens[p].text.as_str());
            boundary_level(prev, &tok.text, tok.boundary_hint, table)
        })
        .collect()
}

/// Length and kind of the next chunk of `levels`, which start at a chunk boundary.
///
/// `stream_end` says whether `levels` runs to the end of the stream; when it
/// does, a remainder that fits in `max_len` without a usable separator becomes
/// the tail.
pub fn next_split(
    levels: &[Option<Level>],
    policy: &ChunkPolicy,
    stream_end: bool,
) -> Option<(usize, BoundaryKind)> {
    let n = levels.len();
    if n == 0 {
        return None;
    }
    if n < policy.min_len {
        return stream_end.then_some((n, BoundaryKind::Tail));
    }
    let window_end = policy.max_len.min(n);
    let mut best: Option<(usize, Level)> = None;
    for (i, level) in levels
        .iter()
        .enumerate()
        .take(window_end)
        .skip(policy.min_len - 1)
    {
        if let Some(level) = *level {
            // `<=` keeps the rightmost among equal levels.
            if best.is_none_or(|(_, b)| level <= b) {
                best = Some((i, level));
            }
        }
    }
    match best {
        Some((i, level)) => Some((i + 1, BoundaryKind::Natural(level))),
        None if n > policy.max_len || (!stream_end && n >= policy.max_len) => {
            Some((policy.max_len, BoundaryKind::Forced))
        }
        None if stream_end => Some((n, BoundaryKind::Tail)),
        None => None,
    }
}

/// Segment precomputed boundary levels of a complete stream.
pub fn segment_levels(levels: &[Option<Level>], policy: &ChunkPolicy) -> Vec<ChunkSpan> {
    let mut spans = Vec::with_capacity(levels.len() / policy.max_len.max(1) + 1);
    let mut start = 0;
    while let Some((len, boundary_kind)) = next_split(&levels[start..], policy, true) {
        spans.push(ChunkSpan {
            start,
            end: start + len,
            boundary_kind,
        });
        start += len;
    }
    spans
}

pub fn segment(tokens: &[TokenRecord], policy: &ChunkPolicy) -> Result<Vec<ChunkSpan>> {
    if tokens.is_empty() {
        return Err(Error::EmptyStream);
    }
    policy.validate()?;
    Ok(segment_levels(
        &boundary_levels(tokens, &policy.separators),
        policy,
    ))
}

/// Check that `spans` tile `0..len` in order.
pub fn check_tiling(spans: &[ChunkSpan], len: usize) -> Result<()> {
    let mut expected = 0;
    for (i, span) in spans.iter().enumerate() {
        if span.start != expected || span.end <= span.start {
            return Err(Error::BadSpans(format!(
                "span {i} is [{}, {}) but should start at {expected}",
                span.start, span.end
            )));
        }
        expected = span.end;
    }
    if expected != len || spans.is_empty() {
        return Err(Error::BadSpans(format!(
            "spans cover {expected} of {len} tokens"
        )));
    }
    Ok(())
}
