#ifndef AHEAD_H
#define AHEAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AheadStatus {
  AHEAD_STATUS_OK = 0,
  /**
   * Invalid argument or configuration.
   */
  AHEAD_STATUS_USAGE = 1,
  /**
   * Unreadable, malformed or inconsistent data.
   */
  AHEAD_STATUS_DATA = 2,
  /**
   * Non-finite values or diverging training.
   */
  AHEAD_STATUS_NUMERICAL = 3,
  /**
   * A required pointer was NULL.
   */
  AHEAD_STATUS_NULL_POINTER = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  AHEAD_STATUS_INTERNAL = 5,
} AheadStatus;

/**
 * A heterogeneous graph, optionally carrying anomaly labels.
 */
typedef struct AheadGraph AheadGraph;

/**
 * Trained parameters together with the configuration that produced them.
 */
typedef struct AheadModel AheadModel;

/**
 * Per-node anomaly scores in global node order.
 */
typedef struct AheadScores AheadScores;

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next call into this library on the same
 * thread.
 */
const char *ahead_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ahead_version(void);

/**
 * Loads a graph bundle directory (with `labels.csv` when present).
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
enum AheadStatus ahead_graph_load(const char *dir, struct AheadGraph **out);

/**
 * Generates a synthetic graph from a named preset such as `coaid-mini`.
 *
 * # Safety
 * `preset` must be NUL-terminated; `out` must be writable.
 */
enum AheadStatus ahead_graph_generate(const char *preset, uint64_t seed, struct AheadGraph **out);

/**
 * Injects anomalies described by a JSON object with the fields `attr_n`
 * (type → count), `attr_k`, `struct_m`, `struct_c`, `struct_relation` and
 * `seed`. The input graph is left unchanged.
 *
 * # Safety
 * `graph` must be a live handle; `config_json` NUL-terminated; `out` writable.
 */
enum AheadStatus ahead_graph_inject(const struct AheadGraph *graph,
                                    const char *config_json,
                                    struct AheadGraph **out);

/**
 * Writes the graph as a bundle directory.
 *
 * # Safety
 * `graph` must be a live handle; `dir` NUL-terminated.
 */
enum AheadStatus ahead_graph_save(const struct AheadGraph *graph, const char *dir);

/**
 * Total node count over all types; 0 for NULL.
 *
 * # Safety
 * `graph` must be NULL or a live handle.
 */
size_t ahead_graph_num_nodes(const struct AheadGraph *graph);

/**
 * Releases a graph.
 *
 * # Safety
 * `graph` must be NULL or a handle not yet freed.
 */
void ahead_graph_free(struct AheadGraph *graph);

/**
 * Trains a model. `config_json` may be NULL for the defaults, or a JSON
 * object with optional `model` and `train` sections.
 *
 * # Safety
 * `graph` must be a live handle; `config_json` NULL or NUL-terminated;
 * `out` writable.
 */
enum AheadStatus ahead_model_train(const struct AheadGraph *graph,
                                   const char *config_json,
                                   struct AheadModel **out);

/**
 * Loads a model file; fails if it was trained on a different schema.
 *
 * # Safety
 * `path` must be NUL-terminated; `graph` a live handle; `out` writable.
 */
enum AheadStatus ahead_model_load(const char *path,
                                  const struct AheadGraph *graph,
                                  struct AheadModel **out);

/**
 * Saves a model file tied to the schema of `graph`.
 *
 * # Safety
 * `model` and `graph` must be live handles; `path` NUL-terminated.
 */
enum AheadStatus ahead_model_save(const struct AheadModel *model,
                                  const struct AheadGraph *graph,
                                  const char *path);

/**
 * Number of recorded epochs; 0 for a loaded model or NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t ahead_model_num_epochs(const struct AheadModel *model);

/**
 * Copies the per-epoch total loss into `buf` (at most `len` values) and
 * stores the number copied in `written`.
 *
 * # Safety
 * `model` must be a live handle; `buf` must hold `len` doubles; `written`
 * must be writable.
 */
enum AheadStatus ahead_model_loss_trace(const struct AheadModel *model,
                                        double *buf,
                                        size_t len,
                                        size_t *written);

/**
 * Releases a model.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void ahead_model_free(struct AheadModel *model);

/**
 * Scores every node of `graph` with weights `lambda1` (structure) and
 * `lambda2` (attributes); the node-type term gets the remainder.
 *
 * # Safety
 * `model` and `graph` must be live handles; `out` writable.
 */
enum AheadStatus ahead_score(const struct AheadModel *model,
                             const struct AheadGraph *graph,
                             double lambda1,
                             double lambda2,
                             struct AheadScores **out);

/**
 * Number of scored nodes; 0 for NULL.
 *
 * # Safety
 * `scores` must be NULL or a live handle.
 */
size_t ahead_scores_len(const struct AheadScores *scores);

/**
 * Copies scores in global node order into `buf`, which must hold exactly
 * [`ahead_scores_len`] values.
 *
 * # Safety
 * `scores` must be a live handle; `buf` must hold `len` doubles.
 */
enum AheadStatus ahead_scores_copy(const struct AheadScores *scores, double *buf, size_t len);

/**
 * AUC of the scores against the labels carried by `graph`.
 *
 * # Safety
 * `scores` and `graph` must be live handles; `out` writable.
 */
enum AheadStatus ahead_scores_auc(const struct AheadScores *scores,
                                  const struct AheadGraph *graph,
                                  double *out);

/**
 * Writes the scores file (type, index, score, probability, rank, residuals).
 *
 * # Safety
 * `scores` must be a live handle; `path` NUL-terminated.
 */
enum AheadStatus ahead_scores_write_csv(const struct AheadScores *scores, const char *path);

/**
 * Releases scores.
 *
 * # Safety
 * `scores` must be NULL or a handle not yet freed.
 */
void ahead_scores_free(struct AheadScores *scores);

#endif  /* AHEAD_H */
