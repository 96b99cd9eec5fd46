#ifndef HKV_H
#define HKV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum HkvPooling {
  HKV_POOLING_MEAN = 0,
  HKV_POOLING_MAX = 1,
} HkvPooling;

typedef enum HkvSelection {
  // Fill clusters up to `budget` tokens.
  HKV_SELECTION_TOKEN_BUDGET = 0,
  // Keep the `budget` best fine clusters.
  HKV_SELECTION_FIXED_CLUSTERS = 1,
} HkvSelection;

// Result code of every call.
typedef enum HkvStatus {
  HKV_STATUS_OK = 0,
  HKV_STATUS_NULL_POINTER = 1,
  HKV_STATUS_INVALID_ARGUMENT = 2,
  HKV_STATUS_DIMENSION_MISMATCH = 3,
  HKV_STATUS_EMPTY_INPUT = 4,
  HKV_STATUS_IO = 5,
  HKV_STATUS_PARSE = 6,
  HKV_STATUS_PANIC = 7,
} HkvStatus;

typedef enum HkvGraftScope {
  HKV_GRAFT_SCOPE_SCOPED = 0,
  HKV_GRAFT_SCOPE_FULL = 1,
} HkvGraftScope;

// Opaque built index.
typedef struct HkvIndex HkvIndex;

// Opaque streaming session.
typedef struct HkvStream HkvStream;

typedef struct HkvIndexOptions {
  size_t min_len;
  size_t max_len;
  double avg_chunks_per_cluster;
  size_t max_coarse_units;
  size_t kmeans_iters;
  enum HkvPooling pooling;
  uint64_t seed;
} HkvIndexOptions;

typedef struct HkvBudgets {
  size_t k_g;
  enum HkvSelection selection;
  size_t budget;
  size_t sink_size;
} HkvBudgets;

typedef struct HkvIndexStats {
  size_t tokens;
  size_t chunks;
  size_t fine_clusters;
  size_t coarse_units;
  double mean_radius_fine;
  double mean_radius_coarse;
  uint64_t index_bytes;
  uint64_t kv_bytes;
  double ratio;
} HkvIndexStats;

typedef struct HkvRetrieval {
  size_t active_count;
  size_t selected_clusters;
  size_t scanned_centroids;
  bool full_attention;
} HkvRetrieval;

typedef struct HkvStepInfo {
  size_t active_count;
  size_t scanned_centroids;
  // NaN on the first step.
  double jaccard;
  double window_hit;
  // The step completed a chunk that was grafted into the index.
  bool grafted;
  size_t total_tokens;
} HkvStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library defaults: chunks of 8..16 tokens, 2 chunks per cluster, at most 64 units.
struct HkvIndexOptions hkv_index_options_default(void);

// k_g = 8, 1024-token budget, 16 sink tokens.
struct HkvBudgets hkv_budgets_default(void);

// Build an index over `n_tokens` keys and values of length `dim`.
//
// `boundary_hints` may be null; otherwise one byte per token, 1..=4 marks a
// boundary of that level after the token and 0 means none. `options` may be
// null for defaults. On success `*out` owns a new index.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum HkvStatus hkv_index_build(const double *keys,
                               const double *values,
                               const uint8_t *boundary_hints,
                               size_t n_tokens,
                               size_t dim,
                               const struct HkvIndexOptions *options,
                               struct HkvIndex **out);

// Load an index written by the `hkv build` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum HkvStatus hkv_index_load(const char *path, struct HkvIndex **out);

// Release an index. Null is ignored.
//
// # Safety
// `index` must come from this library and not be used afterwards.
void hkv_index_free(struct HkvIndex *index);

// # Safety
// `index` must be a live handle and `out` writable.
enum HkvStatus hkv_index_stats(const struct HkvIndex *index, struct HkvIndexStats *out);

// Retrieve for query `q` (length `dim`) and write the attention output to
// `out_vec` (length `dim`). `budgets` may be null for defaults; `info` may be null.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum HkvStatus hkv_index_retrieve(const struct HkvIndex *index,
                                  const double *q,
                                  size_t dim,
                                  const struct HkvBudgets *budgets,
                                  double *out_vec,
                                  struct HkvRetrieval *info);

// Start a streaming session on a copy of `index`; the index handle stays valid.
//
// # Safety
// `index` must be a live handle and `out` writable.
enum HkvStatus hkv_stream_new(const struct HkvIndex *index,
                              enum HkvGraftScope scope,
                              struct HkvStream **out);

// One decode step: attend for `q`, then append the new token (`key`, `value`,
// optional `boundary_hint` 1..=4, 0 for none). Output goes to `out_vec`.
//
// # Safety
// Pointers must be valid for `dim` doubles; `budgets` and `info` may be null.
enum HkvStatus hkv_stream_decode_step(struct HkvStream *stream,
                                      const double *q,
                                      const double *key,
                                      const double *value,
                                      uint8_t boundary_hint,
                                      size_t dim,
                                      const struct HkvBudgets *budgets,
                                      double *out_vec,
                                      struct HkvStepInfo *info);

// Release a streaming session. Null is ignored.
//
// # Safety
// `stream` must come from this library and not be used afterwards.
void hkv_stream_free(struct HkvStream *stream);

// Exact softmax attention of `q` over `n_tokens` keys and values.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum HkvStatus hkv_full_attention(const double *q,
                                  const double *keys,
                                  const double *values,
                                  size_t n_tokens,
                                  size_t dim,
                                  double *out_vec);

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *hkv_last_error(void);

// Static name of a status code.
const char *hkv_status_name(enum HkvStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HKV_H */
