#ifndef HGT_H
#define HGT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HgtSplit {
  HGT_SPLIT_VALIDATION = 0,
  HGT_SPLIT_TEST = 1,
} HgtSplit;

// Result of a call. The error classes match the CLI exit codes.
typedef enum HgtStatus {
  HGT_STATUS_OK = 0,
  // Invalid configuration or arguments.
  HGT_STATUS_CONFIG_ERROR = 2,
  // Malformed or inconsistent data.
  HGT_STATUS_DATA_ERROR = 3,
  // Non-finite loss or a missing gradient.
  HGT_STATUS_NUMERIC_ERROR = 4,
  // A required pointer was null or a string was not UTF-8.
  HGT_STATUS_INVALID_ARGUMENT = 5,
  // The library panicked; the handle involved should not be reused.
  HGT_STATUS_PANIC = 6,
} HgtStatus;

// A loaded heterogeneous graph.
typedef struct HgtGraph HgtGraph;

// A sampled subgraph. It stays valid after its graph is freed.
typedef struct HgtSubgraph HgtSubgraph;

// One sampling seed. `time` is read only when `has_time` is true; plain
// node types require it.
typedef struct HgtSeed {
  size_t node_type;
  size_t id;
  int64_t time;
  bool has_time;
} HgtSeed;

// Ranking metrics of an evaluation. `accuracy` is NaN for the link task.
typedef struct HgtMetrics {
  size_t n_queries;
  double loss;
  double ndcg;
  double mrr;
  double accuracy;
} HgtMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. Valid until the next
// failing call on the same thread; empty if nothing has failed.
const char *hgt_last_error(void);

// Library version as a static string.
const char *hgt_version(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void hgt_string_free(char *s);

// Opens a graph directory (raw TSV files or an ingested bundle).
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid pointer.
enum HgtStatus hgt_graph_open(const char *dir, bool self_loops, struct HgtGraph **out);

// # Safety
// `g` must come from [`hgt_graph_open`] and not have been freed. Null is ignored.
void hgt_graph_free(struct HgtGraph *g);

// Number of node types, or 0 for a null handle.
//
// # Safety
// `g` must be null or a live graph handle.
size_t hgt_graph_num_node_types(const struct HgtGraph *g);

// Number of edge types including generated reverses, or 0 for a null handle.
//
// # Safety
// `g` must be null or a live graph handle.
size_t hgt_graph_num_edge_types(const struct HgtGraph *g);

// Name of node type `ty`, owned by the handle; null when out of range.
//
// # Safety
// `g` must be null or a live graph handle.
const char *hgt_graph_node_type_name(const struct HgtGraph *g, size_t ty);

// Node count of type `ty`, or 0 when the handle is null or `ty` is out of range.
//
// # Safety
// `g` must be null or a live graph handle.
size_t hgt_graph_num_nodes(const struct HgtGraph *g, size_t ty);

// Total edge count over all edge types.
//
// # Safety
// `g` must be null or a live graph handle.
size_t hgt_graph_num_edges(const struct HgtGraph *g);

// Trainable parameter count of a model over the graph's schema.
//
// # Safety
// `g` must be a live graph handle and `out` a valid pointer.
enum HgtStatus hgt_param_count(const struct HgtGraph *g,
                               size_t hidden,
                               size_t heads,
                               size_t layers,
                               bool use_heter,
                               bool use_rte,
                               uint64_t *out);

// Samples a subgraph around `seeds` with `n` draws per type for `depth` rounds.
//
// # Safety
// `g` must be a live graph handle, `seeds` must point to `n_seeds` values
// and `out` must be a valid pointer.
enum HgtStatus hgt_sample(const struct HgtGraph *g,
                          const struct HgtSeed *seeds,
                          size_t n_seeds,
                          size_t n,
                          size_t depth,
                          uint64_t rng_seed,
                          struct HgtSubgraph **out);

// # Safety
// `s` must come from [`hgt_sample`] and not have been freed. Null is ignored.
void hgt_subgraph_free(struct HgtSubgraph *s);

// # Safety
// `s` must be null or a live subgraph handle.
size_t hgt_subgraph_num_nodes(const struct HgtSubgraph *s);

// # Safety
// `s` must be null or a live subgraph handle.
size_t hgt_subgraph_num_edges(const struct HgtSubgraph *s);

// Subgraph as JSON (the `sample` command's format without the stamp),
// owned by the handle; null for a null handle.
//
// # Safety
// `s` must be null or a live subgraph handle.
const char *hgt_subgraph_json(const struct HgtSubgraph *s);

// Trains on `graph_dir` and writes the checkpoint to `out_dir`, as the
// `train` command does. `config` may be null for defaults. When
// `summary_json` is non-null it receives the run summary.
//
// # Safety
// String arguments must be NUL-terminated; `summary_json` must be null or valid.
enum HgtStatus hgt_train(const char *graph_dir,
                         const char *config,
                         const char *out_dir,
                         char **summary_json);

// Evaluates the checkpoint in `ckpt_dir` on one split of `graph_dir`.
//
// # Safety
// String arguments must be NUL-terminated and `out` a valid pointer.
enum HgtStatus hgt_eval(const char *ckpt_dir,
                        const char *graph_dir,
                        enum HgtSplit split,
                        struct HgtMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HGT_H */
