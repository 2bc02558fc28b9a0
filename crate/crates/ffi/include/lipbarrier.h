#ifndef LIPBARRIER_H
#define LIPBARRIER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LbStatus {
  LB_STATUS_OK = 0,
  LB_STATUS_NULL_POINTER = 1,
  LB_STATUS_INVALID_ARGUMENT = 2,
  LB_STATUS_IO = 3,
  LB_STATUS_PARSE = 4,
  // The certificate matrix is not positive definite.
  LB_STATUS_INFEASIBLE = 5,
  LB_STATUS_BUFFER_TOO_SMALL = 6,
  LB_STATUS_PANIC = 7,
} LbStatus;

typedef enum LbCertMode {
  LB_CERT_MODE_FULL_DIAG = 0,
  LB_CERT_MODE_SCALAR_LAMBDA = 1,
  LB_CERT_MODE_SPLIT = 2,
} LbCertMode;

// A network together with its certificate multipliers.
typedef struct LbModel LbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *lb_version(void);

// Message for the last failure on this thread, empty after a success. Valid until the
// next call on the same thread.
const char *lb_last_error(void);

// A network with all parameters zero and unit multipliers.
//
// `activation` is `tanh`, `relu`, `sigmoid`, `leaky_relu` or `leaky_relu:<slope>`.
//
// # Safety
// `dims` must point to `n_dims` values, `activation` must be a NUL-terminated string
// and `out` must be writable.
enum LbStatus lb_model_new(const size_t *dims,
                           size_t n_dims,
                           const char *activation,
                           struct LbModel **out);

// Loads a JSON model file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` must be writable.
enum LbStatus lb_model_load(const char *path, struct LbModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum LbStatus lb_model_save(const struct LbModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void lb_model_free(struct LbModel *model);

// Copies the layer widths into `dims`. `n_dims` receives the number of widths; when
// `cap` is too small nothing is copied and `BufferTooSmall` is returned.
//
// # Safety
// `dims` must have room for `cap` values and `n_dims` must be writable.
enum LbStatus lb_model_dims(const struct LbModel *model, size_t *dims, size_t cap, size_t *n_dims);

// Number of weights and biases.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum LbStatus lb_model_num_params(const struct LbModel *model, size_t *out);

// Copies all parameters into `params`: every weight matrix (row-major, first layer
// first), then every bias vector.
//
// # Safety
// `params` must have room for `len` values.
enum LbStatus lb_model_get_params(const struct LbModel *model, double *params, size_t len);

// Replaces all parameters, in the layout of [`lb_model_get_params`].
//
// # Safety
// `params` must point to `len` values.
enum LbStatus lb_model_set_params(struct LbModel *model, const double *params, size_t len);

// Evaluates the network at `x` (length = input width) into `y` (length = output width).
//
// # Safety
// `x` and `y` must point to `n_in` and `n_out` values.
enum LbStatus lb_model_forward(const struct LbModel *model,
                               const double *x,
                               size_t n_in,
                               double *y,
                               size_t n_out);

// Whether the stored multipliers certify `lipschitz` with Cholesky pivots above `margin`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum LbStatus lb_model_is_feasible(const struct LbModel *model,
                                   double lipschitz,
                                   double margin,
                                   bool *out);

// The barrier value `-rho logdet M` for the stored multipliers.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum LbStatus lb_model_barrier(const struct LbModel *model,
                               double lipschitz,
                               double rho,
                               double *out);

// Certified upper bound on the Lipschitz constant, searched to relative tolerance `tol`.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum LbStatus lb_model_estimate_lipschitz(const struct LbModel *model,
                                          enum LbCertMode mode,
                                          double tol,
                                          double *out);

// Product of the layer spectral norms times the activation slope bound.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum LbStatus lb_model_norm_product_bound(const struct LbModel *model, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIPBARRIER_H */
