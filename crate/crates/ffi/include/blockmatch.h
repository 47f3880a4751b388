#ifndef BLOCKMATCH_H
#define BLOCKMATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BM_VERSION_MAJOR 0

#define BM_VERSION_MINOR 1

typedef enum BmStatus {
  BM_STATUS_OK = 0,
  BM_STATUS_NULL_POINTER = 1,
  BM_STATUS_INVALID_ARGUMENT = 2,
  BM_STATUS_IO = 3,
  BM_STATUS_FORMAT = 4,
  BM_STATUS_FEATURES = 5,
  BM_STATUS_RETRIEVAL = 6,
  BM_STATUS_SCHEDULE = 7,
  BM_STATUS_HASH = 8,
  BM_STATUS_VERIFY = 9,
  BM_STATUS_ENGINE = 10,
  BM_STATUS_PANIC = 11,
} BmStatus;

typedef enum BmStrategy {
  BM_STRATEGY_SEQUENTIAL = 0,
  BM_STRATEGY_LOAD_FREE_LIST = 1,
  BM_STRATEGY_GROUP_BLOCK = 2,
  BM_STRATEGY_MBR = 3,
} BmStrategy;

/**
 * Feature sets, sorted by image id.
 */
typedef struct BmFeatures BmFeatures;

typedef struct BmGraph BmGraph;

typedef struct BmPlan BmPlan;

/**
 * Verified matches and metrics of one execution.
 */
typedef struct BmResult BmResult;

/**
 * Counter metrics of one execution or simulation.
 */
typedef struct BmMetrics {
  uint64_t pairs_matched;
  uint64_t initial_matches;
  uint64_t verified_matches;
  uint64_t uploads;
  uint64_t evictions;
  uint64_t units_uploaded;
  uint64_t peak_occupancy;
  uint64_t capacity;
  uint64_t iterations;
  double utilization_proxy;
} BmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *bm_last_error(void);

/**
 * Static name of a status code; "unknown" outside the enum.
 */
const char *bm_status_name(int32_t status);

/**
 * Synthetic band scene.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum BmStatus bm_features_synthetic(uint32_t n_images,
                                    uint32_t points_per_image,
                                    uint32_t overlap_band,
                                    uint64_t seed,
                                    struct BmFeatures **out);

/**
 * Every feature file in a directory.
 *
 * # Safety
 * `dir` must be a nul-terminated string; `out` as for [`bm_features_synthetic`].
 */
enum BmStatus bm_features_load_dir(const char *dir, struct BmFeatures **out);

/**
 * Number of images, 0 for null.
 *
 * # Safety
 * `f` must be null or a live handle.
 */
uint64_t bm_features_count(const struct BmFeatures *f);

/**
 * # Safety
 * `f` must be null or a handle not yet freed.
 */
void bm_features_free(struct BmFeatures *f);

/**
 * View graph by retrieval with default parameters, `top_n` images per image.
 *
 * # Safety
 * `f` must be a live handle; `out` as for [`bm_features_synthetic`].
 */
enum BmStatus bm_graph_retrieve(const struct BmFeatures *f,
                                uint32_t top_n,
                                uint64_t seed,
                                struct BmGraph **out);

/**
 * Graph over `n_images` ids `0..n_images` with `n_pairs` pairs given as
 * `2 * n_pairs` ids.
 *
 * # Safety
 * `pairs` must point to `2 * n_pairs` readable values (may be null when
 * `n_pairs` is 0); `out` as for [`bm_features_synthetic`].
 */
enum BmStatus bm_graph_from_pairs(uint64_t n_images,
                                  const uint64_t *pairs,
                                  uint64_t n_pairs,
                                  struct BmGraph **out);

/**
 * Matrix Market file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` as for [`bm_features_synthetic`].
 */
enum BmStatus bm_graph_read(const char *path, struct BmGraph **out);

/**
 * # Safety
 * `g` must be a live handle; `path` a nul-terminated string.
 */
enum BmStatus bm_graph_write(const struct BmGraph *g, const char *path);

/**
 * # Safety
 * `g` must be null or a live handle.
 */
uint64_t bm_graph_pair_count(const struct BmGraph *g);

/**
 * Bandwidth under the stored image order.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
uint64_t bm_graph_bandwidth(const struct BmGraph *g);

/**
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void bm_graph_free(struct BmGraph *g);

/**
 * Plan for `strategy`, a [`BmStrategy`] value; `size_blk` applies to the
 * band-reduction strategy.
 *
 * # Safety
 * `g` must be a live handle; `out` as for [`bm_features_synthetic`].
 */
enum BmStatus bm_plan_build(const struct BmGraph *g,
                            uint32_t strategy,
                            uint32_t size_blk,
                            uint32_t size_gpu,
                            struct BmPlan **out);

/**
 * # Safety
 * `p` must be null or a live handle.
 */
uint64_t bm_plan_pair_count(const struct BmPlan *p);

/**
 * # Safety
 * `p` must be null or a live handle.
 */
uint64_t bm_plan_block_count(const struct BmPlan *p);

/**
 * # Safety
 * `p` must be null or a live handle.
 */
uint64_t bm_plan_iteration_count(const struct BmPlan *p);

/**
 * # Safety
 * `p` must be a live handle; `path` a nul-terminated string.
 */
enum BmStatus bm_plan_write_json(const struct BmPlan *p, const char *path);

/**
 * # Safety
 * `p` must be null or a handle not yet freed.
 */
void bm_plan_free(struct BmPlan *p);

/**
 * Replays the plan's data movement with every image `image_units` large on
 * an arena of `size_gpu * image_units`.
 *
 * # Safety
 * `p` must be a live handle; `out` must point to writable metrics.
 */
enum BmStatus bm_plan_simulate(const struct BmPlan *p, uint64_t image_units, struct BmMetrics *out);

/**
 * Matches and verifies every planned pair with default parameters. Pairs
 * are marked processed in `g`, so a plan runs once per graph.
 *
 * # Safety
 * `p`, `g` and `f` must be live handles; `out` as for [`bm_features_synthetic`].
 */
enum BmStatus bm_execute(const struct BmPlan *p,
                         struct BmGraph *g,
                         const struct BmFeatures *f,
                         uint64_t seed,
                         struct BmResult **out);

/**
 * # Safety
 * `r` must be a live handle; `out` must point to writable metrics.
 */
enum BmStatus bm_result_metrics(const struct BmResult *r, struct BmMetrics *out);

/**
 * Total verified matches, 0 for null.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
uint64_t bm_result_match_count(const struct BmResult *r);

/**
 * Verified matches as text, one `i j query_idx train_idx` line per match.
 *
 * # Safety
 * `r` must be a live handle; `path` a nul-terminated string.
 */
enum BmStatus bm_result_write_matches(const struct BmResult *r, const char *path);

/**
 * # Safety
 * `r` must be null or a handle not yet freed.
 */
void bm_result_free(struct BmResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOCKMATCH_H */
