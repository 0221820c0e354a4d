#ifndef BODYFIT_H
#define BODYFIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum BfStatus {
  BF_STATUS_OK = 0,
  // Invalid input or configuration.
  BF_STATUS_VALIDATION = 1,
  // Divergence, non-finite values, failed gradient checks.
  BF_STATUS_NUMERIC = 2,
  BF_STATUS_IO = 3,
  BF_STATUS_NULL_POINTER = 4,
  // Output buffer shorter than required; nothing was written.
  BF_STATUS_BUFFER_TOO_SMALL = 5,
  // A Rust panic was caught at the boundary.
  BF_STATUS_PANIC = 6,
} BfStatus;

// Alignment applied before measuring vertex error.
typedef enum BfAlign {
  // Similarity (Procrustes) alignment.
  BF_ALIGN_PROCRUSTES = 0,
  // Translation only.
  BF_ALIGN_TRANSLATION = 1,
} BfAlign;

// Opaque fit result.
typedef struct BfFitResult BfFitResult;

// Opaque body model.
typedef struct BfModel BfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *bf_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `cap`). Returns the full message length including the NUL.
size_t bf_last_error_message(char *buf, size_t cap);

// Builds a deterministic synthetic model.
enum BfStatus bf_model_synth(uint64_t seed,
                             size_t vertices,
                             size_t joints,
                             size_t shape,
                             size_t expression,
                             struct BfModel **out);

enum BfStatus bf_model_load(const char *path, struct BfModel **out);

enum BfStatus bf_model_save(const struct BfModel *model, const char *path);

// Releases a model; null is ignored.
void bf_model_free(struct BfModel *model);

// Vertex count, or 0 for a null handle.
size_t bf_model_num_vertices(const struct BfModel *model);

size_t bf_model_num_joints(const struct BfModel *model);

size_t bf_model_num_faces(const struct BfModel *model);

// Length of the flat parameter vector.
size_t bf_model_param_len(const struct BfModel *model);

// Writes `3 * num_faces` 0-based vertex indices.
enum BfStatus bf_model_faces(const struct BfModel *model, uint32_t *out, size_t cap);

// Poses the model and writes `3 * num_vertices` coordinates. A null
// `params` means the rest pose with zero shape and expression.
enum BfStatus bf_model_pose(const struct BfModel *model,
                            const double *params,
                            size_t params_len,
                            double *out_vertices,
                            size_t cap);

// Fits the model to a keypoint file. `config_path` and `prior_path` may be
// null for defaults.
enum BfStatus bf_fit(const struct BfModel *model,
                     const char *keypoints_path,
                     const char *config_path,
                     const char *prior_path,
                     struct BfFitResult **out);

enum BfStatus bf_fit_result_loss(const struct BfFitResult *result, double *out);

// Writes the fitted flat parameter vector (`bf_model_param_len` values).
enum BfStatus bf_fit_result_params(const struct BfFitResult *result, double *out, size_t cap);

enum BfStatus bf_fit_result_save(const struct BfFitResult *result, const char *path);

void bf_fit_result_free(struct BfFitResult *result);

// Mean per-vertex error between two point sets of `n` points each.
enum BfStatus bf_v2v(const double *pred,
                     const double *gt,
                     size_t n,
                     enum BfAlign align,
                     double *out);

// Runs every gradient suite over `seeds` seeds. Returns `Numeric` when any
// check fails; `out_failed` (nullable) receives the number of failing checks.
enum BfStatus bf_gradcheck(size_t seeds, size_t *out_failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BODYFIT_H */
