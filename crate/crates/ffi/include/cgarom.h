#ifndef CGAROM_H
#define CGAROM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum CgaromStatus {
  CGAROM_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  CGAROM_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument, shape mismatch or violated precondition.
   */
  CGAROM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * I/O failure, corrupt file or version mismatch.
   */
  CGAROM_STATUS_IO = 3,
  /**
   * Non-finite values in the computation.
   */
  CGAROM_STATUS_NUMERICAL = 4,
  /**
   * The output buffer is too small; the message names the required length.
   */
  CGAROM_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * Internal panic caught at the boundary.
   */
  CGAROM_STATUS_PANIC = 6,
} CgaromStatus;

/**
 * Dataset handle.
 */
typedef struct CgaromDataset CgaromDataset;

/**
 * Trained model handle.
 */
typedef struct CgaromModel CgaromModel;

/**
 * Shape information of a model.
 */
typedef struct CgaromModelInfo {
  size_t n_basis;
  size_t latent;
  size_t channels;
  size_t dim;
  size_t mu_dim;
  size_t geo_dim;
  bool has_time;
  size_t num_params;
} CgaromModelInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread (empty after a success).
 * Valid until the next call into this library from the same thread.
 */
const char *cgarom_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cgarom_version(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CgaromStatus cgarom_model_load(const char *path, struct CgaromModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`cgarom_model_load`] and not be used afterwards.
 */
void cgarom_model_free(struct CgaromModel *model);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum CgaromStatus cgarom_model_info(const struct CgaromModel *model, struct CgaromModelInfo *out);

/**
 * Predicts the field at `n_points` points (row-major `n_points × dim`) of
 * the geometry `xi` for parameters `mu` and optional time `*t` (null when
 * the model has no time input). Writes `n_points × channels` values.
 *
 * # Safety
 * Every pointer must reference at least the stated number of `double`s.
 */
enum CgaromStatus cgarom_model_infer(const struct CgaromModel *model,
                                     const double *t,
                                     const double *mu,
                                     size_t mu_len,
                                     const double *xi,
                                     size_t xi_len,
                                     const double *points,
                                     size_t n_points,
                                     double *out,
                                     size_t out_len);

/**
 * Latent code `φ(t, μ, ξ)`; writes `latent` values.
 *
 * # Safety
 * Every pointer must reference at least the stated number of `double`s.
 */
enum CgaromStatus cgarom_model_reduce(const struct CgaromModel *model,
                                      const double *t,
                                      const double *mu,
                                      size_t mu_len,
                                      const double *xi,
                                      size_t xi_len,
                                      double *out,
                                      size_t out_len);

/**
 * Opens a dataset directory.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CgaromStatus cgarom_dataset_open(const char *dir, struct CgaromDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must come from [`cgarom_dataset_open`] and not be used afterwards.
 */
void cgarom_dataset_free(struct CgaromDataset *ds);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t cgarom_dataset_len(const struct CgaromDataset *ds);

/**
 * Point count and channel count of sample `index` (storage order).
 *
 * # Safety
 * `ds` must be a live handle; `n_h` and `channels` valid pointers.
 */
enum CgaromStatus cgarom_dataset_sample_shape(const struct CgaromDataset *ds,
                                              size_t index,
                                              size_t *n_h,
                                              size_t *channels);

/**
 * Copies the points (`n_h × dim`) and values (`n_h × channels`) of sample
 * `index`. Either output may be null to skip it.
 *
 * # Safety
 * Non-null outputs must hold at least the stated number of `double`s.
 */
enum CgaromStatus cgarom_dataset_sample_data(const struct CgaromDataset *ds,
                                             size_t index,
                                             double *points,
                                             size_t points_len,
                                             double *values,
                                             size_t values_len);

/**
 * Mean relative error `E_R` and global relative error `E` of `model` on a
 * split named `"train"`, `"val"` or `"test"`.
 *
 * # Safety
 * Handles must be live; `split` NUL-terminated; outputs valid pointers.
 */
enum CgaromStatus cgarom_model_evaluate(const struct CgaromModel *model,
                                        const struct CgaromDataset *ds,
                                        const char *split,
                                        double *e_r,
                                        double *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CGAROM_H */
