#ifndef CAUSAL_CROWDS_H
#define CAUSAL_CROWDS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_POINTER = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_OUT_OF_RANGE = 3,
  CC_STATUS_BUFFER_TOO_SMALL = 4,
  CC_STATUS_IO = 5,
  CC_STATUS_PARSE = 6,
  CC_STATUS_DIGEST_MISMATCH = 7,
  CC_STATUS_INVARIANT_VIOLATION = 8,
  CC_STATUS_INFEASIBLE = 9,
  CC_STATUS_INTERNAL = 10,
} CcStatus;

typedef enum CcCategory {
  CC_CATEGORY_NON_CAUSAL = 0,
  CC_CATEGORY_DIRECT_CAUSAL = 1,
  CC_CATEGORY_INDIRECT_CAUSAL = 2,
  CC_CATEGORY_AMBIGUOUS = 3,
} CcCategory;

/**
 * Loaded or generated split. Strings handed out stay valid until
 * [`cc_split_free`].
 */
typedef struct CcSplit CcSplit;

typedef struct CcVec2 {
  double x;
  double y;
} CcVec2;

/**
 * Half-plane of admissible velocities: left of `point + t * direction`.
 */
typedef struct CcOrcaLine {
  struct CcVec2 point;
  struct CcVec2 direction;
} CcOrcaLine;

typedef struct CcAnnotation {
  size_t agent_id;
  double effect;
  enum CcCategory category;
} CcAnnotation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *cc_last_error_message(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *cc_version(void);

/**
 * Velocity closest to `v_pref` inside the speed disc and every half-plane.
 * Returns `Infeasible` when no such velocity exists.
 *
 * # Safety
 * `lines` must be valid for `n` reads; `out` must be writable.
 */
enum CcStatus cc_solve_lp2(const struct CcOrcaLine *lines,
                           size_t n,
                           struct CcVec2 v_pref,
                           double v_max,
                           struct CcVec2 *out);

/**
 * Velocity in the speed disc minimising the largest half-plane violation.
 *
 * # Safety
 * `lines` must be valid for `n` reads; `out` must be writable.
 */
enum CcStatus cc_solve_lp3(const struct CcOrcaLine *lines,
                           size_t n,
                           double v_max,
                           struct CcVec2 *out);

/**
 * Mean point-wise distance of two `n`-point trajectories.
 *
 * # Safety
 * `pred` and `truth` must be valid for `n` reads; `out` must be writable.
 */
enum CcStatus cc_ade(const struct CcVec2 *pred, const struct CcVec2 *truth, size_t n, double *out);

/**
 * Distance between the last points of two `n`-point trajectories.
 *
 * # Safety
 * `pred` and `truth` must be valid for `n` reads; `out` must be writable.
 */
enum CcStatus cc_fde(const struct CcVec2 *pred, const struct CcVec2 *truth, size_t n, double *out);

/**
 * Generate a split with default settings. `split` is one of `id`,
 * `ood_density`, `ood_context`, `ood_density_context`.
 *
 * # Safety
 * `split` must be a valid string; `out` must be writable.
 */
enum CcStatus cc_split_generate(const char *split,
                                size_t num_scenes,
                                uint64_t seed,
                                struct CcSplit **out);

/**
 * Load and fully validate a split directory.
 *
 * # Safety
 * `dir` must be a valid string; `out` must be writable.
 */
enum CcStatus cc_split_read(const char *dir, struct CcSplit **out);

/**
 * Write a split to an existing directory.
 *
 * # Safety
 * `split` must be a live handle; `dir` a valid string.
 */
enum CcStatus cc_split_write(const struct CcSplit *split, const char *dir);

/**
 * Release a split handle. Null is ignored.
 *
 * # Safety
 * `split` must be null or a handle not yet freed.
 */
void cc_split_free(struct CcSplit *split);

/**
 * Number of scenes, 0 for a null handle.
 *
 * # Safety
 * `split` must be null or a live handle.
 */
size_t cc_split_len(const struct CcSplit *split);

/**
 * Hex content digest; null for a null handle.
 *
 * # Safety
 * `split` must be null or a live handle.
 */
const char *cc_split_digest(const struct CcSplit *split);

/**
 * Scene id, or null when out of range.
 *
 * # Safety
 * `split` must be null or a live handle.
 */
const char *cc_split_scene_id(const struct CcSplit *split, size_t scene);

/**
 * Agent count (ego included) and step count of a scene.
 *
 * # Safety
 * `split` must be a live handle; outputs must be writable.
 */
enum CcStatus cc_split_scene_shape(const struct CcSplit *split,
                                   size_t scene,
                                   size_t *num_agents,
                                   size_t *num_steps);

/**
 * Copy one agent's positions into `out`. `capacity` must cover the step count.
 *
 * # Safety
 * `split` must be a live handle; `out` writable for `capacity` points.
 */
enum CcStatus cc_split_trajectory(const struct CcSplit *split,
                                  size_t scene,
                                  size_t agent,
                                  struct CcVec2 *out,
                                  size_t capacity);

/**
 * Number of annotated neighbours of a scene, 0 when out of range.
 *
 * # Safety
 * `split` must be null or a live handle.
 */
size_t cc_split_num_annotations(const struct CcSplit *split, size_t scene);

/**
 * The `k`-th annotation of a scene, ordered by agent id.
 *
 * # Safety
 * `split` must be a live handle; `out` writable.
 */
enum CcStatus cc_split_annotation(const struct CcSplit *split,
                                  size_t scene,
                                  size_t k,
                                  struct CcAnnotation *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAUSAL_CROWDS_H */
