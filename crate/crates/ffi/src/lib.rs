//! C ABI over the `hkv` engine.
//!
//! Handles are opaque pointers owned by the caller and released with the matching
//! `*_free` function. Every entry point returns an [`HkvStatus`]; on failure the
//! message is available from [`hkv_last_error`] on the same thread until the next call.
//! Vectors are row-major `double` arrays; `dim` is the per-vector length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hkv::chunker::{segment, ChunkPolicy, TokenRecord};
use hkv::error::Error;
use hkv::evaluator::full_attention;
use hkv::kv_index::{build_index, HierarchicalIndex, IndexConfig, Pooling, TokenStore};
use hkv::retriever::{retrieve, Budgets, SelectionMode};
use hkv::streamer::{GraftScope, StreamConfig, StreamState};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    EmptyInput = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkvPooling {
    Mean = 0,
    Max = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkvSelection {
    /// Fill clusters up to `budget` tokens.
    TokenBudget = 0,
    /// Keep the `budget` best fine clusters.
    FixedClusters = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HkvGraftScope {
    Scoped = 0,
    Full = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HkvIndexOptions {
    pub min_len: usize,
    pub max_len: usize,
    pub avg_chunks_per_cluster: f64,
    pub max_coarse_units: usize,
    pub kmeans_iters: usize,
    pub pooling: HkvPooling,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HkvBudgets {
    pub k_g: usize,
    pub selection: HkvSelection,
    pub budget: usize,
    pub sink_size: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HkvIndexStats {
    pub tokens: usize,
    pub chunks: usize,
    pub fine_clusters: usize,
    pub coarse_units: usize,
    pub mean_radius_fine: f64,
    pub mean_radius_coarse: f64,
    pub index_bytes: u64,
    pub kv_bytes: u64,
    pub ratio: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HkvRetrieval {
    pub active_count: usize,
    pub selected_clusters: usize,
    pub scanned_centroids: usize,
    pub full_attention: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HkvStepInfo {
    pub active_count: usize,
    pub scanned_centroids: usize,
    /// NaN on the first step.
    pub jaccard: f64,
    pub window_hit: f64,
    /// The step completed a chunk that was grafted into the index.
    pub grafted: bool,
    pub total_tokens: usize,
}

/// Opaque built index.
pub struct HkvIndex(HierarchicalIndex);

/// Opaque streaming session.
pub struct HkvStream(StreamState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(HkvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => HkvStatus::DimensionMismatch,
            Error::EmptyStream
            | Error::EmptyKeys
            | Error::EmptyIndex
            | Error::EmptyActiveSet
            | Error::EmptyOracle => HkvStatus::EmptyInput,
            Error::Io { .. } => HkvStatus::Io,
            Error::Json(_) | Error::InvalidUtf8(_) => HkvStatus::Parse,
            _ => HkvStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HkvStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(HkvStatus::InvalidArgument, msg.into())
}

/// Run `f`, converting errors and panics into a status plus thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HkvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HkvStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            HkvStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn opt_ref<'a, T>(p: *const T) -> Option<&'a T> {
    p.as_ref()
}

fn to_budgets(b: &HkvBudgets) -> Result<Budgets, Fail> {
    let budgets = Budgets {
        k_g: b.k_g,
        selection: match b.selection {
            HkvSelection::TokenBudget => SelectionMode::TokenBudget(b.budget),
            HkvSelection::FixedClusters => SelectionMode::FixedClusters(b.budget),
        },
        sink_size: b.sink_size,
    };
    budgets.validate()?;
    Ok(budgets)
}

fn tokens_from_arrays(
    keys: &[f64],
    values: &[f64],
    hints: Option<&[u8]>,
    n: usize,
    dim: usize,
) -> Vec<TokenRecord> {
    (0..n)
        .map(|i| {
            let mut t = TokenRecord::new(
                i,
                "",
                keys[i * dim..(i + 1) * dim].to_vec(),
                values[i * dim..(i + 1) * dim].to_vec(),
            );
            if let Some(h) = hints {
                if (1..=4).contains(&h[i]) {
                    t.boundary_hint = Some(h[i]);
                }
            }
            t
        })
        .collect()
}

/// Library defaults: chunks of 8..16 tokens, 2 chunks per cluster, at most 64 units.
#[no_mangle]
pub extern "C" fn hkv_index_options_default() -> HkvIndexOptions {
    let policy = ChunkPolicy::default();
    let cfg = IndexConfig::default();
    HkvIndexOptions {
        min_len: policy.min_len,
        max_len: policy.max_len,
        avg_chunks_per_cluster: cfg.avg_chunks_per_cluster,
        max_coarse_units: cfg.max_coarse_units,
        kmeans_iters: cfg.kmeans_iters,
        pooling: HkvPooling::Mean,
        seed: cfg.seed,
    }
}

/// k_g = 8, 1024-token budget, 16 sink tokens.
#[no_mangle]
pub extern "C" fn hkv_budgets_default() -> HkvBudgets {
    let b = Budgets::default();
    let (selection, budget) = match b.selection {
        SelectionMode::TokenBudget(n) => (HkvSelection::TokenBudget, n),
        SelectionMode::FixedClusters(n) => (HkvSelection::FixedClusters, n),
    };
    HkvBudgets {
        k_g: b.k_g,
        selection,
        budget,
        sink_size: b.sink_size,
    }
}

/// Build an index over `n_tokens` keys and values of length `dim`.
///
/// `boundary_hints` may be null; otherwise one byte per token, 1..=4 marks a
/// boundary of that level after the token and 0 means none. `options` may be
/// null for defaults. On success `*out` owns a new index.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hkv_index_build(
    keys: *const f64,
    values: *const f64,
    boundary_hints: *const u8,
    n_tokens: usize,
    dim: usize,
    options: *const HkvIndexOptions,
    out: *mut *mut HkvIndex,
) -> HkvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if n_tokens == 0 || dim == 0 {
            return Err(Fail(
                HkvStatus::EmptyInput,
                "n_tokens and dim must be positive".into(),
            ));
        }
        let len = n_tokens
            .checked_mul(dim)
            .ok_or_else(|| invalid("n_tokens * dim overflows"))?;
        let keys = slice(keys, len, "keys")?;
        let values = slice(values, len, "values")?;
        let hints = if boundary_hints.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(boundary_hints, n_tokens))
        };
        let opts = opt_ref(options)
            .copied()
            .unwrap_or_else(|| hkv_index_options_default());
        let policy = ChunkPolicy::new(opts.min_len, opts.max_len)?;
        let cfg = IndexConfig {
            avg_chunks_per_cluster: opts.avg_chunks_per_cluster,
            max_coarse_units: opts.max_coarse_units,
            kmeans_iters: opts.kmeans_iters,
            pooling: match opts.pooling {
                HkvPooling::Mean => Pooling::Mean,
                HkvPooling::Max => Pooling::Max,
            },
            seed: opts.seed,
            ..IndexConfig::default()
        };
        let tokens = tokens_from_arrays(keys, values, hints, n_tokens, dim);
        let spans = segment(&tokens, &policy)?;
        let index = build_index(&tokens, &spans, &cfg)?;
        *out = Box::into_raw(Box::new(HkvIndex(index)));
        Ok(())
    })
}

/// Load an index written by the `hkv build` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hkv_index_load(path: *const c_char, out: *mut *mut HkvIndex) -> HkvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(HkvStatus::Parse, "path is not UTF-8".into()))?;
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: HierarchicalIndex = serde_json::from_str(&body).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(HkvIndex(index)));
        Ok(())
    })
}

/// Release an index. Null is ignored.
///
/// # Safety
/// `index` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hkv_index_free(index: *mut HkvIndex) {
    if !index.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(index))));
    }
}

/// # Safety
/// `index` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hkv_index_stats(
    index: *const HkvIndex,
    out: *mut HkvIndexStats,
) -> HkvStatus {
    guard(|| {
        let index = &opt_ref(index).ok_or_else(|| null("index"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = index.stats();
        *out = HkvIndexStats {
            tokens: s.tokens,
            chunks: s.chunks,
            fine_clusters: s.fine_clusters,
            coarse_units: s.coarse_units,
            mean_radius_fine: s.mean_radius_fine,
            mean_radius_coarse: s.mean_radius_coarse,
            index_bytes: s.index_bytes,
            kv_bytes: s.kv_bytes,
            ratio: s.ratio,
        };
        Ok(())
    })
}

/// Retrieve for query `q` (length `dim`) and write the attention output to
/// `out_vec` (length `dim`). `budgets` may be null for defaults; `info` may be null.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hkv_index_retrieve(
    index: *const HkvIndex,
    q: *const f64,
    dim: usize,
    budgets: *const HkvBudgets,
    out_vec: *mut f64,
    info: *mut HkvRetrieval,
) -> HkvStatus {
    guard(|| {
        let index = &opt_ref(index).ok_or_else(|| null("index"))?.0;
        check_dim(index.dim(), dim)?;
        let q = slice(q, dim, "q")?;
        let out_vec = slice_mut(out_vec, dim, "out_vec")?;
        let budgets = to_budgets(
            &opt_ref(budgets)
                .copied()
                .unwrap_or_else(|| hkv_budgets_default()),
        )?;
        let r = retrieve(index, q, &budgets, &[])?;
        out_vec.copy_from_slice(&r.output);
        if let Some(info) = info.as_mut() {
            *info = HkvRetrieval {
                active_count: r.active_token_ids.len(),
                selected_clusters: r.selected_clusters.len(),
                scanned_centroids: r.scanned_centroids,
                full_attention: r.full_attention,
            };
        }
        Ok(())
    })
}

fn check_dim(expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got }.into());
    }
    Ok(())
}

/// Start a streaming session on a copy of `index`; the index handle stays valid.
///
/// # Safety
/// `index` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hkv_stream_new(
    index: *const HkvIndex,
    scope: HkvGraftScope,
    out: *mut *mut HkvStream,
) -> HkvStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let index = opt_ref(index).ok_or_else(|| null("index"))?.0.clone();
        let config = StreamConfig {
            policy: ChunkPolicy::default(),
            graft_scope: match scope {
                HkvGraftScope::Scoped => GraftScope::Scoped,
                HkvGraftScope::Full => GraftScope::Full,
            },
            ..StreamConfig::default()
        };
        let state = StreamState::new(index, config, None)?;
        *out = Box::into_raw(Box::new(HkvStream(state)));
        Ok(())
    })
}

/// One decode step: attend for `q`, then append the new token (`key`, `value`,
/// optional `boundary_hint` 1..=4, 0 for none). Output goes to `out_vec`.
///
/// # Safety
/// Pointers must be valid for `dim` doubles; `budgets` and `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn hkv_stream_decode_step(
    stream: *mut HkvStream,
    q: *const f64,
    key: *const f64,
    value: *const f64,
    boundary_hint: u8,
    dim: usize,
    budgets: *const HkvBudgets,
    out_vec: *mut f64,
    info: *mut HkvStepInfo,
) -> HkvStatus {
    guard(|| {
        let state = &mut stream.as_mut().ok_or_else(|| null("stream"))?.0;
        check_dim(state.index.dim(), dim)?;
        let q = slice(q, dim, "q")?;
        let key = slice(key, dim, "key")?;
        let value = slice(value, dim, "value")?;
        let out_vec = slice_mut(out_vec, dim, "out_vec")?;
        let budgets = to_budgets(
            &opt_ref(budgets)
                .copied()
                .unwrap_or_else(|| hkv_budgets_default()),
        )?;
        if boundary_hint > 4 {
            return Err(invalid("boundary_hint must be 0..=4"));
        }
        let mut token =
            TokenRecord::new(state.index.total_tokens(), "", key.to_vec(), value.to_vec());
        if boundary_hint > 0 {
            token.boundary_hint = Some(boundary_hint);
        }
        let step = state.decode_step(q, &token, &budgets)?;
        out_vec.copy_from_slice(&step.output);
        if let Some(info) = info.as_mut() {
            *info = HkvStepInfo {
                active_count: step.retrieval.active_token_ids.len(),
                scanned_centroids: step.retrieval.scanned_centroids,
                jaccard: step.jaccard.unwrap_or(f64::NAN),
                window_hit: step.window_hit,
                grafted: step.graft.is_some(),
                total_tokens: state.index.total_tokens(),
            };
        }
        Ok(())
    })
}

/// Release a streaming session. Null is ignored.
///
/// # Safety
/// `stream` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hkv_stream_free(stream: *mut HkvStream) {
    if !stream.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(stream))));
    }
}

/// Exact softmax attention of `q` over `n_tokens` keys and values.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn hkv_full_attention(
    q: *const f64,
    keys: *const f64,
    values: *const f64,
    n_tokens: usize,
    dim: usize,
    out_vec: *mut f64,
) -> HkvStatus {
    guard(|| {
        if n_tokens == 0 || dim == 0 {
            return Err(Fail(
                HkvStatus::EmptyInput,
                "n_tokens and dim must be positive".into(),
            ));
        }
        let len = n_tokens
            .checked_mul(dim)
            .ok_or_else(|| invalid("n_tokens * dim overflows"))?;
        let q = slice(q, dim, "q")?;
        let keys = slice(keys, len, "keys")?;
        let values = slice(values, len, "values")?;
        let out_vec = slice_mut(out_vec, dim, "out_vec")?;
        let mut store = TokenStore::new(dim)?;
        for t in tokens_from_arrays(keys, values, None, n_tokens, dim) {
            store.push(&t)?;
        }
        out_vec.copy_from_slice(&full_attention(q, &store)?);
        Ok(())
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn hkv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn hkv_status_name(status: HkvStatus) -> *const c_char {
    let s: &'static CStr = match status {
        HkvStatus::Ok => c"ok",
        HkvStatus::NullPointer => c"null pointer",
        HkvStatus::InvalidArgument => c"invalid argument",
        HkvStatus::DimensionMismatch => c"dimension mismatch",
        HkvStatus::EmptyInput => c"empty input",
        HkvStatus::Io => c"io error",
        HkvStatus::Parse => c"parse error",
        HkvStatus::Panic => c"panic",
    };
    s.as_ptr()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let prev = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let status = guard(|| panic!("boom"));
        std::panic::set_hook(prev);
        assert_eq!(status, HkvStatus::Panic);
        let msg = unsafe { CStr::from_ptr(hkv_last_error()) }
            .to_str()
            .unwrap()
            .to_owned();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn error_kinds_map_to_codes() {
        let code = |e: Error| Fail::from(e).0;
        assert_eq!(
            code(Error::DimensionMismatch {
                expected: 1,
                got: 2
            }),
            HkvStatus::DimensionMismatch
        );
        assert_eq!(code(Error::EmptyStream), HkvStatus::EmptyInput);
        assert_eq!(
            code(Error::InvalidConfig("x".into())),
            HkvStatus::InvalidArgument
        );
        assert_eq!(code(Error::InvalidUtf8("p".into())), HkvStatus::Parse);
    }
}
