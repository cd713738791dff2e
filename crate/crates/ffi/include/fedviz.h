#ifndef FEDVIZ_H
#define FEDVIZ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FvStatus {
  FV_STATUS_OK = 0,
  FV_STATUS_NULL_POINTER = 1,
  FV_STATUS_CONFIG = 2,
  FV_STATUS_DATA = 3,
  FV_STATUS_NUMERICAL = 4,
  FV_STATUS_IO = 5,
  FV_STATUS_INVALID_UTF8 = 6,
  FV_STATUS_PANIC = 7,
} FvStatus;

typedef enum FvMatrixKind {
  FV_MATRIX_KIND_DISTANCE = 0,
  FV_MATRIX_KIND_KERNEL = 1,
} FvMatrixKind;

typedef enum FvCommand {
  FV_COMMAND_FEDDL_FIT = 0,
  FV_COMMAND_TSNE = 1,
  FV_COMMAND_UMAP = 2,
  FV_COMMAND_SPECLUST = 3,
} FvCommand;

/**
 * Parsed run configuration.
 */
typedef struct FvConfig FvConfig;

/**
 * Dense real matrix.
 */
typedef struct FvMatrix FvMatrix;

/**
 * Finished pipeline run.
 */
typedef struct FvRun FvRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *fv_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next `fv_*` call on the same thread.
 */
const char *fv_last_error(void);

/**
 * Copies `rows × cols` row-major values into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` doubles (or be null when that is 0);
 * `out` must be writable.
 */
enum FvStatus fv_matrix_new(size_t rows, size_t cols, const double *data, struct FvMatrix **out);

/**
 * # Safety
 * `m` must be a live handle or null.
 */
size_t fv_matrix_rows(const struct FvMatrix *m);

/**
 * # Safety
 * `m` must be a live handle or null.
 */
size_t fv_matrix_cols(const struct FvMatrix *m);

/**
 * Writes the values row-major into `buf`, which holds `len` doubles.
 *
 * # Safety
 * `m` must be a live handle; `buf` must hold `len` doubles.
 */
enum FvStatus fv_matrix_copy(const struct FvMatrix *m, double *buf, size_t len);

/**
 * # Safety
 * `m` must come from this library and not be used afterwards. Null is a no-op.
 */
void fv_matrix_free(struct FvMatrix *m);

/**
 * Squared MMD between the points of `x` and `y` under `exp(-γ‖·‖²)`.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum FvStatus fv_mmd(const struct FvMatrix *x, const struct FvMatrix *y, double gamma, double *out);

/**
 * Gradient of [`fv_mmd`] with respect to `y`, shaped like `y`.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum FvStatus fv_mmd_gradient(const struct FvMatrix *x,
                              const struct FvMatrix *y,
                              double gamma,
                              struct FvMatrix **out);

/**
 * Nyström completion of the `n_x × n_x` distance or kernel matrix of `x`
 * from its blocks against the landmarks `y`. `gamma` is ignored for
 * distances.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum FvStatus fv_nystrom_complete(const struct FvMatrix *x,
                                  const struct FvMatrix *y,
                                  enum FvMatrixKind kind,
                                  double gamma,
                                  struct FvMatrix **out);

/**
 * t-SNE of a squared-distance matrix into `out_dim` dimensions
 * (`n × out_dim` result); other settings take their defaults.
 *
 * # Safety
 * `d2` must be live; `out` writable.
 */
enum FvStatus fv_tsne(const struct FvMatrix *d2,
                      size_t out_dim,
                      double perplexity,
                      size_t iterations,
                      uint64_t seed,
                      struct FvMatrix **out);

/**
 * UMAP of a squared-distance matrix (`n × out_dim` result).
 *
 * # Safety
 * `d2` must be live; `out` writable.
 */
enum FvStatus fv_umap(const struct FvMatrix *d2,
                      size_t out_dim,
                      size_t n_neighbors,
                      size_t iterations,
                      uint64_t seed,
                      struct FvMatrix **out);

/**
 * Spectral clustering of a kernel matrix into `c` clusters; writes one
 * label per row into `labels` (length `len`).
 *
 * # Safety
 * `kernel` must be live; `labels` must hold `len` values.
 */
enum FvStatus fv_spectral_cluster(const struct FvMatrix *kernel,
                                  size_t c,
                                  uint64_t seed,
                                  size_t *labels,
                                  size_t len);

/**
 * Gaussian-mechanism noise scale for `(ε, δ)`-DP over `rounds` releases.
 *
 * # Safety
 * `out` must be writable.
 */
enum FvStatus fv_gaussian_sigma_for_dp(double epsilon,
                                       double delta,
                                       size_t rounds,
                                       double sensitivity,
                                       double *out);

/**
 * Parses a TOML run configuration; null or empty text gives the defaults.
 *
 * # Safety
 * `toml` must be null or NUL-terminated; `out` writable.
 */
enum FvStatus fv_config_from_toml(const char *toml, struct FvConfig **out);

/**
 * # Safety
 * `c` must come from this library and not be used afterwards. Null is a no-op.
 */
void fv_config_free(struct FvConfig *c);

/**
 * Runs a pipeline command. Relative dataset paths resolve against
 * `data_dir`; outputs are written to `out_dir` unless it is null.
 *
 * # Safety
 * `config` must be live; strings NUL-terminated or null; `out` writable.
 */
enum FvStatus fv_run(const struct FvConfig *config,
                     enum FvCommand command,
                     const char *data_dir,
                     const char *out_dir,
                     struct FvRun **out);

/**
 * The run manifest as TOML, owned by the handle.
 *
 * # Safety
 * `run` must be live or null.
 */
const char *fv_run_manifest(const struct FvRun *run);

/**
 * # Safety
 * `run` must come from this library and not be used afterwards. Null is a no-op.
 */
void fv_run_free(struct FvRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDVIZ_H */
