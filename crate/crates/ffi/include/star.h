#ifndef STAR_H
#define STAR_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum StarStatus {
  STAR_STATUS_OK = 0,
  STAR_STATUS_INVALID_ARGUMENT = 1,
  STAR_STATUS_NULL_POINTER = 2,
  STAR_STATUS_BUFFER_SIZE = 3,
  STAR_STATUS_PARSE = 4,
  STAR_STATUS_VALIDATION = 5,
  STAR_STATUS_FORMAT = 6,
  STAR_STATUS_IO = 7,
  STAR_STATUS_NUMERICAL = 8,
  STAR_STATUS_UNREACHABLE = 9,
  STAR_STATUS_PANIC = 10,
} StarStatus;

/**
 * Opaque model handle.
 */
typedef struct StarModel StarModel;

/**
 * Scalar outcome of `star_fit`.
 */
typedef struct StarFitSummary {
  double v2v;
  size_t iterations;
  bool converged;
} StarFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *star_last_error(void);

/**
 * Loads a model container from `path`. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum StarStatus star_model_load(const char *path, struct StarModel **out);

/**
 * Parses a model container from a JSON string.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum StarStatus star_model_from_json(const char *json, struct StarModel **out);

/**
 * # Safety
 * `model` must be a valid handle and `path` a nul-terminated string.
 */
enum StarStatus star_model_save(const struct StarModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void star_model_free(struct StarModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t star_model_num_vertices(const struct StarModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t star_model_num_joints(const struct StarModel *model);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t star_model_num_betas(const struct StarModel *model);

/**
 * Posed vertices into `out` (length `3 * num_vertices`). `beta` may be
 * shorter than `num_betas`; missing coefficients are zero.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum StarStatus star_model_forward(const struct StarModel *model,
                                   const double *beta,
                                   size_t beta_len,
                                   const double *pose,
                                   size_t pose_len,
                                   double *out,
                                   size_t out_len);

/**
 * Summed pose correctives into `out` (length `3 * num_vertices`).
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum StarStatus star_model_pose_correctives(const struct StarModel *model,
                                            const double *pose,
                                            size_t pose_len,
                                            double beta2,
                                            double *out,
                                            size_t out_len);

/**
 * Non-zero and dense-equivalent corrective parameter counts.
 *
 * # Safety
 * `model` must be a valid handle; outputs must be valid pointers.
 */
enum StarStatus star_model_count_nonzero(const struct StarModel *model,
                                         size_t *nonzero,
                                         size_t *dense);

/**
 * Mean absolute coordinate difference ×1000.
 *
 * # Safety
 * `a` and `b` must be valid for `len` values; `out` a valid pointer.
 */
enum StarStatus star_v2v(const double *a, const double *b, size_t len, double *out);

/**
 * Fits pose and shape to `target`. `pose` holds the initial pose and
 * receives the fitted one (length `3 * num_joints`); `shape` likewise
 * (length `num_betas`). A negative `shape_coeffs` frees every coefficient.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
enum StarStatus star_fit(const struct StarModel *model,
                         const double *target,
                         size_t target_len,
                         double *pose,
                         size_t pose_len,
                         double *shape,
                         size_t shape_len,
                         ptrdiff_t shape_coeffs,
                         size_t max_iterations,
                         struct StarFitSummary *summary);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STAR_H */
