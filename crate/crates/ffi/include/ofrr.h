/* Generated by cbindgen; do not edit. */

#ifndef OFRR_H
#define OFRR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OfrrFormat {
  OFRR_FORMAT_F16 = 0,
  OFRR_FORMAT_F32 = 1,
  OFRR_FORMAT_F64 = 2,
} OfrrFormat;

typedef enum OfrrStatus {
  OFRR_STATUS_OK = 0,
  OFRR_STATUS_NULL_POINTER = 1,
  OFRR_STATUS_INVALID_ARGUMENT = 2,
  OFRR_STATUS_DIMENSION_MISMATCH = 3,
  OFRR_STATUS_EMPTY_BASIS = 4,
  OFRR_STATUS_NON_FINITE = 5,
  OFRR_STATUS_NON_CONVERGENCE = 6,
  OFRR_STATUS_PARSE = 7,
  OFRR_STATUS_IO = 8,
  OFRR_STATUS_BUFFER_TOO_SMALL = 9,
  OFRR_STATUS_PANIC = 10,
} OfrrStatus;

typedef enum OfrrBasisMethod {
  OFRR_BASIS_METHOD_MGS_LEFT = 0,
  OFRR_BASIS_METHOD_MGS_LEFT_REORTH = 1,
  OFRR_BASIS_METHOD_MGS_RIGHT = 2,
  OFRR_BASIS_METHOD_CGS = 3,
  OFRR_BASIS_METHOD_CGS2 = 4,
  OFRR_BASIS_METHOD_HESS_LEFT = 5,
  OFRR_BASIS_METHOD_HESS_RIGHT = 6,
  OFRR_BASIS_METHOD_ARNOLDI_MGS = 7,
  OFRR_BASIS_METHOD_KRYLOV_HESS = 8,
} OfrrBasisMethod;

typedef enum OfrrProjection {
  OFRR_PROJECTION_RR = 0,
  OFRR_PROJECTION_OFRR = 1,
} OfrrProjection;

/**
 * Precision presets.
 */
typedef enum OfrrPreset {
  OFRR_PRESET_DOUBLE = 0,
  OFRR_PRESET_SINGLE = 1,
  OFRR_PRESET_MIXED_HALF = 2,
  OFRR_PRESET_NATIVE_HALF = 3,
} OfrrPreset;

/**
 * Opaque matrix handle (dense or sparse).
 */
typedef struct OfrrMatrix OfrrMatrix;

/**
 * Opaque result handle.
 */
typedef struct OfrrRitzSet OfrrRitzSet;

/**
 * Driver parameters. `top == 0` reports every pair;
 * `has_basis_policy == 0` uses `policy` for the basis and projection too.
 */
typedef struct OfrrIterConfig {
  size_t k;
  size_t m;
  size_t iter;
  size_t restarts;
  enum OfrrBasisMethod basis_method;
  enum OfrrProjection projection;
  enum OfrrPreset policy;
  uint8_t has_basis_policy;
  enum OfrrPreset basis_policy;
  uint64_t seed;
  size_t top;
} OfrrIterConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length without
 * the terminator, 0 when there is none.
 */
size_t ofrr_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ofrr_version(void);

/**
 * Rounds `x` to `fmt` (round to nearest even, overflow to infinity).
 */
double ofrr_round_to(double x, enum OfrrFormat fmt);

/**
 * Driver defaults: k 20, m 1, iter 1, MGS with reorthogonalization, RR,
 * double precision.
 */
enum OfrrStatus ofrr_iter_config_default(struct OfrrIterConfig *out);

/**
 * Dense `rows x cols` matrix from column-major `data`, stored in `fmt`.
 */
enum OfrrStatus ofrr_matrix_dense_new(size_t rows,
                                      size_t cols,
                                      const double *data,
                                      enum OfrrFormat fmt,
                                      struct OfrrMatrix **out);

/**
 * Symmetric sparse matrix from 0-based triplets (duplicates summed).
 */
enum OfrrStatus ofrr_matrix_csr_from_triplets(size_t dim,
                                              size_t nnz,
                                              const size_t *rows,
                                              const size_t *cols,
                                              const double *values,
                                              struct OfrrMatrix **out);

/**
 * Reads a symmetric Matrix Market file; `rescale != 0` scales the largest
 * eigenvalue to about 64.
 */
enum OfrrStatus ofrr_matrix_read_matrix_market(const char *path,
                                               uint8_t rescale,
                                               struct OfrrMatrix **out);

/**
 * Gaussian kernel over `n` points drawn uniformly from a square of side
 * `side` (`side <= 0` means `sqrt(n)`). `cols > 0` builds the cross-kernel
 * against `cols` of those points.
 */
enum OfrrStatus ofrr_matrix_gaussian_kernel(size_t n,
                                            size_t cols,
                                            double side,
                                            double f,
                                            double l,
                                            double s,
                                            uint64_t seed,
                                            struct OfrrMatrix **out);

size_t ofrr_matrix_rows(const struct OfrrMatrix *m);

size_t ofrr_matrix_cols(const struct OfrrMatrix *m);

/**
 * `y = A x` in `f64`; `x` has `cols` entries, `y` has `rows`.
 */
enum OfrrStatus ofrr_matrix_apply(const struct OfrrMatrix *m, const double *x, double *y);

/**
 * Frees a matrix; null is ignored.
 */
void ofrr_matrix_free(struct OfrrMatrix *m);

/**
 * Multi-step subspace iteration for the leading eigenpairs.
 */
enum OfrrStatus ofrr_subspace_iter_eig(const struct OfrrMatrix *m,
                                       const struct OfrrIterConfig *cfg,
                                       struct OfrrRitzSet **out);

/**
 * Restarted Krylov iteration (`basis_method` Arnoldi or Krylov-Hessenberg).
 */
enum OfrrStatus ofrr_krylov_eig(const struct OfrrMatrix *m,
                                const struct OfrrIterConfig *cfg,
                                struct OfrrRitzSet **out);

/**
 * Alternating subspace iteration for the leading singular triplets.
 */
enum OfrrStatus ofrr_subspace_iter_svd(const struct OfrrMatrix *m,
                                       const struct OfrrIterConfig *cfg,
                                       struct OfrrRitzSet **out);

/**
 * Number of pairs in the set.
 */
size_t ofrr_ritz_len(const struct OfrrRitzSet *r);

/**
 * Rows of the (left) Ritz vectors.
 */
size_t ofrr_ritz_vector_rows(const struct OfrrRitzSet *r);

/**
 * Rows of the right singular vectors, 0 for eigenproblems.
 */
size_t ofrr_ritz_right_vector_rows(const struct OfrrRitzSet *r);

/**
 * Copies the values (descending) into `buf`.
 */
enum OfrrStatus ofrr_ritz_values(const struct OfrrRitzSet *r, double *buf, size_t len);

/**
 * Copies the relative residuals into `buf`.
 */
enum OfrrStatus ofrr_ritz_residuals(const struct OfrrRitzSet *r, double *buf, size_t len);

/**
 * Copies the (left) vectors, column-major `vector_rows x len`.
 */
enum OfrrStatus ofrr_ritz_vectors(const struct OfrrRitzSet *r, double *buf, size_t len);

/**
 * Copies the right singular vectors, column-major; fails with
 * `InvalidArgument` for eigenproblem results.
 */
enum OfrrStatus ofrr_ritz_right_vectors(const struct OfrrRitzSet *r, double *buf, size_t len);

/**
 * Frees a result; null is ignored.
 */
void ofrr_ritz_free(struct OfrrRitzSet *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFRR_H */
