#ifndef GREYBOX_H
#define GREYBOX_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum GbStatus {
  GB_STATUS_OK = 0,
  GB_STATUS_NULL_POINTER = 1,
  GB_STATUS_INVALID_ARGUMENT = 2,
  GB_STATUS_DOMAIN = 3,
  GB_STATUS_SINGULAR = 4,
  GB_STATUS_OVERDAMPED = 5,
  GB_STATUS_NON_FINITE = 6,
  GB_STATUS_IO = 7,
  GB_STATUS_PARSE = 8,
  GB_STATUS_VALIDATION = 9,
  GB_STATUS_PANIC = 10,
} GbStatus;

// Opaque normal model.
typedef struct GbNormalModel GbNormalModel;

// Shape signature of one trace.
typedef struct GbSignature {
  double gamma;
  double r;
  double omega;
  double y;
  double phi;
  double c;
  double x;
} GbSignature;

// PI controller and first-order process.
typedef struct GbControlParams {
  double k_p;
  double k_c;
  double tau_p;
  double tau_i;
  double q1;
  double q2;
} GbControlParams;

// Coefficients of `v'' + gamma v' + k v = a t + b`.
typedef struct GbOdeParams {
  double gamma;
  double k;
  double a;
  double b;
} GbOdeParams;

typedef struct GbShapeTrend {
  double omega;
  double c;
  double y;
} GbShapeTrend;

typedef struct GbProcessRecovery {
  double tau_p;
  double k_p;
  double q1;
  double q2;
} GbProcessRecovery;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null if none. Owned by the
// library; do not free.
const char *gb_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *gb_version(void);

// Evaluates the oscillator at time `t`.
//
// # Safety
// `s` and `out` must be valid pointers.
enum GbStatus gb_eval(const struct GbSignature *s, double t, double *out);

// Gradient of the oscillator value with respect to the seven parameters.
//
// # Safety
// `s` must be valid and `out_grad` must hold 7 doubles.
enum GbStatus gb_grad_params(const struct GbSignature *s, double t, double *out_grad);

// Hessian of the oscillator value, row-major 7x7.
//
// # Safety
// `s` must be valid and `out_hess` must hold 49 doubles.
enum GbStatus gb_hess_params(const struct GbSignature *s, double t, double *out_hess);

// Fits one trace on its own (no prior) with default settings.
//
// # Safety
// `times` and `values` must hold `n` doubles; `out` and `out_ssr` must be
// valid (`out_ssr` may be null).
enum GbStatus gb_fit_trace(const double *times,
                           const double *values,
                           size_t n,
                           struct GbSignature *out,
                           double *out_ssr);

// ODE coefficients induced by a set-point change on the output.
//
// # Safety
// Pointers must be valid.
enum GbStatus gb_ode_from_control_output(const struct GbControlParams *cp, struct GbOdeParams *out);

// ODE coefficients induced by a set-point change on the input.
//
// # Safety
// Pointers must be valid.
enum GbStatus gb_ode_from_control_input(const struct GbControlParams *cp, struct GbOdeParams *out);

// Frequency, slope and offset of the motion described by `ode`.
//
// # Safety
// Pointers must be valid.
enum GbStatus gb_shape_from_ode(const struct GbOdeParams *ode, struct GbShapeTrend *out);

// ODE coefficients implied by a shape signature.
//
// # Safety
// Pointers must be valid.
enum GbStatus gb_ode_from_signature(const struct GbSignature *s, struct GbOdeParams *out);

// Recovers the process parameters when `k_c` and `tau_i` are known.
//
// # Safety
// Pointers must be valid.
enum GbStatus gb_control_from_ode_known(const struct GbOdeParams *ode,
                                        double k_c,
                                        double tau_i,
                                        struct GbProcessRecovery *out);

// Writes 1 to `out` when the closed loop oscillates, else 0.
//
// # Safety
// Pointers must be valid.
enum GbStatus gb_oscillates(const struct GbControlParams *cp, int32_t *out);

// Creates a normal model from its hyperparameters. `prior_exponent` is 0
// for the variance convention and 1 for the standard-deviation convention.
//
// # Safety
// `mu_star` and `sigma_star_s` must hold 7 doubles; the strings must be
// NUL-terminated UTF-8; `out` receives the handle.
enum GbStatus gb_normal_model_new(double sigma_star,
                                  const double *mu_star,
                                  const double *sigma_star_s,
                                  int32_t prior_exponent,
                                  const char *tool,
                                  const char *sensor,
                                  const char *step,
                                  struct GbNormalModel **out);

// Loads a normal-model file written by the command-line tool.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` receives the handle.
enum GbStatus gb_normal_model_load(const char *path, struct GbNormalModel **out);

// Writes a normal model to a file.
//
// # Safety
// `nm` must be a live handle; `path` a NUL-terminated UTF-8 string.
enum GbStatus gb_normal_model_save(const struct GbNormalModel *nm, const char *path);

// Copies the hyperparameters out of a handle. Any out pointer may be null.
//
// # Safety
// `nm` must be a live handle; non-null arrays must hold 7 doubles.
enum GbStatus gb_normal_model_params(const struct GbNormalModel *nm,
                                     double *sigma_star,
                                     double *mu_star,
                                     double *sigma_star_s);

// Releases a handle. Null is accepted.
//
// # Safety
// `nm` must come from a `gb_normal_model_*` constructor and not be used
// afterwards.
void gb_normal_model_free(struct GbNormalModel *nm);

// Anomaly score of signature `s` fitted to the given trace.
//
// # Safety
// `nm` must be a live handle; `times`/`values` hold `n` doubles.
enum GbStatus gb_score(const struct GbNormalModel *nm,
                       const struct GbSignature *s,
                       const double *times,
                       const double *values,
                       size_t n,
                       double *out);

// Gradient of the anomaly score (7 doubles).
//
// # Safety
// As [`gb_score`]; `out_grad` holds 7 doubles.
enum GbStatus gb_score_gradient(const struct GbNormalModel *nm,
                                const struct GbSignature *s,
                                const double *times,
                                const double *values,
                                size_t n,
                                double *out_grad);

// Hessian of the anomaly score, row-major 7x7.
//
// # Safety
// As [`gb_score`]; `out_hess` holds 49 doubles.
enum GbStatus gb_score_hessian(const struct GbNormalModel *nm,
                               const struct GbSignature *s,
                               const double *times,
                               const double *values,
                               size_t n,
                               double *out_hess);

// Approximate score gradient at a change point between two consecutive
// wafers, expanded about the earlier one whose trace is given.
//
// # Safety
// As [`gb_score`]; `out_grad` holds 7 doubles.
enum GbStatus gb_changepoint_gradient(const struct GbNormalModel *nm,
                                      const struct GbSignature *s_before,
                                      const struct GbSignature *s_after,
                                      const double *times_before,
                                      const double *values_before,
                                      size_t n,
                                      double *out_grad);

// Parameter indices (0 = gamma ... 6 = x) ordered by decreasing gradient
// magnitude.
//
// # Safety
// `grad` holds 7 doubles and `out_order` 7 ints.
enum GbStatus gb_rank_contributors(const double *grad, int32_t *out_order);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GREYBOX_H */
