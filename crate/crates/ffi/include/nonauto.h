#ifndef NONAUTO_H
#define NONAUTO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define NA_NORM_INDUCED1 1

#define NA_NORM_INDUCED2 2

#define NA_NORM_INDUCED_INF 3

/**
 * Result of every fallible call.
 */
typedef enum NaStatus {
  NA_STATUS_OK = 0,
  NA_STATUS_NULL_POINTER = 1,
  NA_STATUS_INVALID_ARGUMENT = 2,
  NA_STATUS_DIMENSION_MISMATCH = 3,
  NA_STATUS_SINGULAR = 4,
  NA_STATUS_NOT_CONVERGED = 5,
  NA_STATUS_NUMERICAL_FAILURE = 6,
  NA_STATUS_PANIC = 7,
} NaStatus;

/**
 * Opaque Euler-polygon approximant `U_n(t, s)`.
 */
typedef struct NaEvolution NaEvolution;

/**
 * Opaque perturbation family `t -> B(t)` on a closed interval.
 */
typedef struct NaFamily NaFamily;

/**
 * Opaque square matrix with its norm kind.
 */
typedef struct NaOperator NaOperator;

/**
 * Summary of a hyperbolicity test of a time-1 map.
 */
typedef struct NaDichotomyReport {
  bool hyperbolic;
  double spectral_gap;
  size_t stable_rank;
  double alpha;
  double mdich;
  bool defective;
} NaDichotomyReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *na_last_error(void);

/**
 * Copies a row-major `dim x dim` array into a new operator.
 *
 * # Safety
 * `entries` must point to `dim * dim` readable doubles; `out` must be writable.
 */
enum NaStatus na_operator_new(const double *entries,
                              size_t dim,
                              uint32_t norm,
                              struct NaOperator **out);

/**
 * Parses the plain-text `dim k` matrix format.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum NaStatus na_operator_parse(const char *text, uint32_t norm, struct NaOperator **out);

/**
 * # Safety
 * `op` must come from this library and not be freed twice; null is ignored.
 */
void na_operator_free(struct NaOperator *op);

/**
 * Dimension of `op`, or 0 for a null handle.
 *
 * # Safety
 * `op` must be null or a live handle.
 */
size_t na_operator_dim(const struct NaOperator *op);

/**
 * Writes the entries of `op` row-major into `out`, which holds `len` doubles.
 *
 * # Safety
 * `op` must be a live handle and `out` must hold `len` writable doubles.
 */
enum NaStatus na_operator_entries(const struct NaOperator *op, double *out, size_t len);

/**
 * Induced operator norm of `op`.
 *
 * # Safety
 * `op` must be a live handle; `out` must be writable.
 */
enum NaStatus na_op_norm(const struct NaOperator *op, double *out);

/**
 * `R(mu, A) = (mu I - A)^{-1}`.
 *
 * # Safety
 * `a` must be a live handle; `out` must be writable.
 */
enum NaStatus na_resolvent(const struct NaOperator *a, double mu, struct NaOperator **out);

/**
 * `e^{tA}`.
 *
 * # Safety
 * `a` must be a live handle; `out` must be writable.
 */
enum NaStatus na_expm(const struct NaOperator *a, double t, struct NaOperator **out);

/**
 * Fits `||e^{tA}|| <= M e^{omega0 t}` on `[0, horizon]`.
 *
 * # Safety
 * `a` must be a live handle; `m` and `omega0` must be writable.
 */
enum NaStatus na_fit_growth_bound(const struct NaOperator *a,
                                  double horizon,
                                  double *m,
                                  double *omega0);

/**
 * `||C||_A` for the growth bound `(m, omega0)` on the default mu-grid.
 *
 * # Safety
 * `c` and `a` must be live handles; `out` must be writable.
 */
enum NaStatus na_a_norm(const struct NaOperator *c,
                        const struct NaOperator *a,
                        double m,
                        double omega0,
                        double *out);

/**
 * Yosida distance `limsup lambda^2 ||R(lambda, A) - R(lambda, B)||`.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum NaStatus na_yosida_distance(const struct NaOperator *a,
                                 const struct NaOperator *b,
                                 double *out);

/**
 * `B(t) = B0` on `[t0, t1]`.
 *
 * # Safety
 * `b0` must be a live handle; `out` must be writable.
 */
enum NaStatus na_family_constant(const struct NaOperator *b0,
                                 double t0,
                                 double t1,
                                 struct NaFamily **out);

/**
 * `B(t) = sin(freq t + phase) B0` on `[t0, t1]`.
 *
 * # Safety
 * `b0` must be a live handle; `out` must be writable.
 */
enum NaStatus na_family_sinusoid(const struct NaOperator *b0,
                                 double freq,
                                 double phase,
                                 double t0,
                                 double t1,
                                 struct NaFamily **out);

/**
 * # Safety
 * `f` must come from this library and not be freed twice; null is ignored.
 */
void na_family_free(struct NaFamily *f);

/**
 * Euler polygon at dyadic level `level` over the family's interval.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum NaStatus na_euler_polygon(const struct NaOperator *a,
                               const struct NaFamily *b,
                               uint32_t level,
                               struct NaEvolution **out);

/**
 * Refines until successive approximants of `U(t1, t0)` differ by at most
 * `tol`. `n_final` and `achieved` may be null.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum NaStatus na_refine_to_tolerance(const struct NaOperator *a,
                                     const struct NaFamily *b,
                                     double tol,
                                     uint32_t n_max,
                                     struct NaEvolution **out,
                                     uint32_t *n_final,
                                     double *achieved);

/**
 * Dyadic level of `u`, or `u32::MAX` for a null handle.
 *
 * # Safety
 * `u` must be null or a live handle.
 */
uint32_t na_evolution_level(const struct NaEvolution *u);

/**
 * `U_n(t, s)` for `t0 <= s <= t <= t1`.
 *
 * # Safety
 * `u` must be a live handle; `out` must be writable.
 */
enum NaStatus na_evolution_evaluate(const struct NaEvolution *u,
                                    double t,
                                    double s,
                                    struct NaOperator **out);

/**
 * # Safety
 * `u` must come from this library and not be freed twice; null is ignored.
 */
void na_evolution_free(struct NaEvolution *u);

/**
 * Tests a time-1 map for an exponential dichotomy.
 *
 * # Safety
 * `t1` must be a live handle; `out` must be writable.
 */
enum NaStatus na_check_hyperbolic(const struct NaOperator *t1, struct NaDichotomyReport *out);

/**
 * Library version as a static NUL-terminated string.
 */
const char *na_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NONAUTO_H */
