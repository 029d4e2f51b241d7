#ifndef DIFFCLASS_H
#define DIFFCLASS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_ARGUMENT = 2,
  DC_STATUS_SIMULATION = 3,
  DC_STATUS_EVALUATION = 4,
  DC_STATUS_TRAINING = 5,
  DC_STATUS_FIT = 6,
  DC_STATUS_FORMAT = 7,
  DC_STATUS_SCHEMA = 8,
  DC_STATUS_IO = 9,
  DC_STATUS_BUFFER_TOO_SMALL = 10,
  DC_STATUS_PANIC = 11,
} DcStatus;

// Labeled set of paths on a common grid.
typedef struct DcDataset DcDataset;

// Trained score function.
typedef struct DcModel DcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library from the same thread.
const char *dc_last_error(void);

// Library version as a static NUL-terminated string.
const char *dc_version(void);

// Simulates `n_paths` paths with `steps` steps from built-in model
// `model_id` (1, 2 or 3).
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum DcStatus dc_dataset_simulate(uint32_t model_id,
                                  size_t n_paths,
                                  size_t steps,
                                  uint64_t seed,
                                  struct DcDataset **out);

// Builds a dataset from a row-major `n_paths × (steps + 1)` array of path
// values and `n_paths` labels in `1..=n_classes`.
//
// # Safety
// `values` and `labels` must point to arrays of the stated sizes; `out`
// must be a valid pointer to a handle slot.
enum DcStatus dc_dataset_from_arrays(const double *values,
                                     const uint32_t *labels,
                                     size_t n_paths,
                                     size_t steps,
                                     size_t n_classes,
                                     struct DcDataset **out);

// Reads a dataset file (`.csv` text, otherwise binary).
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid handle slot.
enum DcStatus dc_dataset_read(const char *path, struct DcDataset **out);

// Writes a dataset file (`.csv` text, otherwise binary).
//
// # Safety
// `data` must be a live handle; `path` a NUL-terminated string.
enum DcStatus dc_dataset_write(const struct DcDataset *data, const char *path);

// Writes the number of paths, steps per path and classes.
//
// # Safety
// `data` must be a live handle; each out pointer may be NULL.
enum DcStatus dc_dataset_shape(const struct DcDataset *data,
                               size_t *n_paths,
                               size_t *steps,
                               size_t *n_classes);

// Copies path `index` (0-based) into `values` (length `steps + 1`) and its
// 1-based label into `label`.
//
// # Safety
// `data` must be a live handle, `values` must hold `len` doubles.
enum DcStatus dc_dataset_path(const struct DcDataset *data,
                              size_t index,
                              double *values,
                              size_t len,
                              uint32_t *label);

// # Safety
// `data` must be NULL or a handle not yet freed.
void dc_dataset_free(struct DcDataset *data);

// Trains a score function with penalized selection of `(D1, D2)` over
// `grid × grid`. `grid_len = 0` uses the default grid {2, 4, 8};
// `kappa <= 0` uses 1; `max_iters = 0` uses the default iteration cap.
//
// # Safety
// `data` must be a live handle, `grid` must hold `grid_len` entries, and
// `out` must be a valid handle slot.
enum DcStatus dc_model_train(const struct DcDataset *data,
                             const size_t *grid,
                             size_t grid_len,
                             double kappa,
                             size_t max_iters,
                             struct DcModel **out);

// Writes the number of classes and the selected `(D1, D2)`.
//
// # Safety
// `model` must be a live handle; each out pointer may be NULL.
enum DcStatus dc_model_shape(const struct DcModel *model,
                             size_t *n_classes,
                             size_t *drift_dim,
                             size_t *diffusion_dim);

// Posterior class probabilities of one path (`len` values starting at 0).
//
// # Safety
// `model` must be a live handle, `values` must hold `len` doubles and
// `posterior` must hold `n_posterior` doubles.
enum DcStatus dc_model_posterior(const struct DcModel *model,
                                 const double *values,
                                 size_t len,
                                 double *posterior,
                                 size_t n_posterior);

// Predicted 1-based class of one path.
//
// # Safety
// `model` must be a live handle, `values` must hold `len` doubles, and
// `class_out` must be valid.
enum DcStatus dc_model_classify(const struct DcModel *model,
                                const double *values,
                                size_t len,
                                uint32_t *class_out);

// Serializes the model as JSON into `buf` (NUL-terminated). `needed`
// receives the required size including the NUL; with a NULL or short
// buffer the call returns `BufferTooSmall` and writes only `needed`.
//
// # Safety
// `model` must be a live handle; `buf` must hold `buf_len` bytes.
enum DcStatus dc_model_to_json(const struct DcModel *model,
                               char *buf,
                               size_t buf_len,
                               size_t *needed);

// Loads a model from JSON (a trained-model or score-params document).
//
// # Safety
// `json` must be NUL-terminated; `out` a valid handle slot.
enum DcStatus dc_model_from_json(const char *json, struct DcModel **out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void dc_model_free(struct DcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFCLASS_H */
