#ifndef VCGP_H
#define VCGP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum VcgpStatus {
  VCGP_STATUS_OK = 0,
  VCGP_STATUS_NULL_POINTER = 1,
  VCGP_STATUS_INVALID_ARGUMENT = 2,
  VCGP_STATUS_DIMENSION_MISMATCH = 3,
  VCGP_STATUS_NUMERICAL = 4,
  VCGP_STATUS_IO = 5,
  VCGP_STATUS_PARSE = 6,
  VCGP_STATUS_PANIC = 7,
} VcgpStatus;

/*
 A trained model.
 */
typedef struct VcgpModel VcgpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL after a success.
 The pointer stays valid until the next call on this thread.
 */
const char *vcgp_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *vcgp_version(void);

/*
 Fit a model to `n` rows of `q` inputs and `d` outputs. NaN inputs are
 missing and trigger the two-stage partially-observed procedure; `q = 0`
 is not allowed here (use a latent model from the CLI instead).
 `config_json` is a fit config in JSON or NULL for defaults.

 # Safety
 `inputs` must hold `n*q` and `outputs` `n*d` doubles; `config_json` must
 be NULL or NUL-terminated; `out` must be writable.
 */
enum VcgpStatus vcgp_fit(const double *inputs,
                         uintptr_t n,
                         uintptr_t q,
                         const double *outputs,
                         uintptr_t d,
                         const char *config_json,
                         struct VcgpModel **out);

/*
 Load a model saved by this library or the CLI.

 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum VcgpStatus vcgp_model_load(const char *path, struct VcgpModel **out);

/*
 # Safety
 `model` must be a live handle; `path` must be NUL-terminated.
 */
enum VcgpStatus vcgp_model_save(const struct VcgpModel *model, const char *path);

/*
 Release a handle. NULL is ignored.

 # Safety
 `model` must be NULL or a live handle, not used afterwards.
 */
void vcgp_model_free(struct VcgpModel *model);

/*
 Training rows, input and output dimensions and inducing count. Any
 output pointer may be NULL.

 # Safety
 `model` must be a live handle; non-null outputs must be writable.
 */
enum VcgpStatus vcgp_model_dims(const struct VcgpModel *model,
                                uintptr_t *n,
                                uintptr_t *q,
                                uintptr_t *d,
                                uintptr_t *m);

/*
 The training objective at the stored parameters.

 # Safety
 `model` must be a live handle; `out` must be writable.
 */
enum VcgpStatus vcgp_model_bound(const struct VcgpModel *model, double *out);

/*
 Predictive means and variances at `rows` inputs of width q, written as
 `rows*d` arrays. A null `input_var` means certain inputs.

 # Safety
 `x` (and `input_var` when non-null) must hold `rows*q` doubles; the
 outputs must hold `rows*d` doubles.
 */
enum VcgpStatus vcgp_predict(const struct VcgpModel *model,
                             const double *x,
                             const double *input_var,
                             uintptr_t rows,
                             int include_noise,
                             double *mean_out,
                             double *var_out);

/*
 Posterior q(x*) for one output vector `y` of width d (NaN = missing).
 `clamp` is NULL or q values where non-NaN entries fix that input
 dimension. Writes q means and q variances.

 # Safety
 `y` must hold d doubles, `clamp` q doubles or be NULL, outputs q doubles.
 */
enum VcgpStatus vcgp_infer_latent(const struct VcgpModel *model,
                                  const double *y,
                                  const double *clamp,
                                  double *mean_out,
                                  double *var_out);

/*
 Free simulation of an auto-regressive model (q = window·d) from
 `seed_window` (window·d values, oldest first) for `horizon` steps.
 Writes `horizon*d` means and variances.

 # Safety
 `seed_window` must hold window·d doubles; outputs `horizon*d` doubles.
 */
enum VcgpStatus vcgp_forecast(const struct VcgpModel *model,
                              const double *seed_window,
                              uintptr_t window,
                              uintptr_t horizon,
                              int propagate_uncertainty,
                              double *mean_out,
                              double *var_out);

/*
 `length` unit-spaced samples of the Mackey-Glass delay equation
 dζ/dt = −bζ + αζ(t−T)/(1+ζ(t−T)¹⁰) with constant history.

 # Safety
 `out` must hold `length` doubles.
 */
enum VcgpStatus vcgp_mackey_glass(double alpha,
                                  double b,
                                  double delay,
                                  double step,
                                  double history_init,
                                  uintptr_t length,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VCGP_H */
