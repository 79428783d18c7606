/* C interface for the trapscope welfare-mobility library. */

#pragma once

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from trapscope-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a `ts_*` call. Anything but [`TsStatus::Ok`] leaves a
 * description in [`ts_last_error_message`].
 */
typedef enum TsStatus {
  TS_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  TS_STATUS_NULL_POINTER = 1,
  /**
   * An argument outside its documented domain (zero sizes, bad lengths,
   * malformed probabilities, unknown dimensions).
   */
  TS_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input data that could not be read or parsed.
   */
  TS_STATUS_PARSE = 3,
  /**
   * An operating-system level failure while reading input.
   */
  TS_STATUS_IO = 4,
  /**
   * A numerical routine could not reach its advertised accuracy.
   */
  TS_STATUS_NUMERICAL = 5,
  /**
   * An internal invariant failed; the library caught a panic at the
   * boundary instead of unwinding into foreign frames.
   */
  TS_STATUS_INTERNAL = 6,
} TsStatus;

/**
 * An estimated or directly constructed transition model. Opaque.
 */
typedef struct TsModel TsModel;

/**
 * A loaded longitudinal panel. Opaque.
 */
typedef struct TsPanel TsPanel;

/**
 * One observed transition between consecutive waves, the raw material of
 * [`ts_model_estimate`]. `household` groups records into trajectories and
 * `from_wave` orders them; both only matter for `order > 1`, where runs are
 * reassembled before counting.
 */
typedef struct TsTransition {
  uint64_t household;
  uint64_t from_state;
  uint64_t to_state;
  double weight;
  int32_t from_wave;
} TsTransition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string; never freed.
 */
const char *ts_version(void);

/**
 * Explanation of the most recent failing call on this thread, as a
 * NUL-terminated string. Empty until the first failure. The pointer stays
 * valid until the next failing `ts_*` call on the same thread; copy it out
 * before calling back in. Never freed by the caller.
 */
const char *ts_last_error_message(void);

/**
 * Static name of a status code, e.g. `"ok"` or `"invalid argument"`.
 * Unknown values map to `"unknown"`. Never freed.
 */
const char *ts_status_name(enum TsStatus status);

/**
 * Build a first-order model from a dense row-major `n x n` kernel. Rows must
 * be finite, nonnegative, and sum to 1 within the library's tolerance.
 *
 * # Safety
 * `p` must point to `n * n` readable doubles and `out` to a writable model
 * pointer. On success `*out` owns a new model; release it with
 * [`ts_model_free`].
 */
enum TsStatus ts_model_from_dense(const double *p, size_t n, struct TsModel **out);

/**
 * Estimate a model of the given `order` from raw transition records over
 * `n_states` flat states. Weights must be positive and finite; states must
 * be below `n_states`.
 *
 * # Safety
 * `records` must point to `len` readable [`TsTransition`] values and `out`
 * to a writable model pointer. On success `*out` owns a new model; release
 * it with [`ts_model_free`].
 */
enum TsStatus ts_model_estimate(const struct TsTransition *records,
                                size_t len,
                                size_t n_states,
                                size_t order,
                                struct TsModel **out);

/**
 * Produce a regularized copy of `model` with every transition given at least
 * pseudo-weight `eta`, guaranteeing irreducibility. The input is untouched.
 *
 * # Safety
 * `model` must be a live handle from this library and `out` a writable model
 * pointer. On success `*out` owns a new model; release it with
 * [`ts_model_free`].
 */
enum TsStatus ts_model_regularized(const struct TsModel *model, double eta, struct TsModel **out);

/**
 * Release a model created by this library. Null is a no-op. Passing the same
 * handle twice, or a pointer from anywhere else, is undefined behavior.
 *
 * # Safety
 * `model` must be null or a pointer previously returned through a `ts_model_*`
 * out-parameter and not yet freed.
 */
void ts_model_free(struct TsModel *model);

/**
 * Number of base states (the state-space size, independent of order).
 *
 * # Safety
 * `model` must be a live handle and `out` a writable location.
 */
enum TsStatus ts_model_n_states(const struct TsModel *model, size_t *out);

/**
 * Markov order of the model.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable location.
 */
enum TsStatus ts_model_order(const struct TsModel *model, size_t *out);

/**
 * Shape of the stored probability matrix: `rows x cols` where `rows` is the
 * number of histories (`n_states ^ order`) and `cols` is `n_states`.
 *
 * # Safety
 * `model` must be a live handle; `rows` and `cols` must be writable.
 */
enum TsStatus ts_model_shape(const struct TsModel *model, size_t *rows, size_t *cols);

/**
 * Copy the probability matrix into `out` in row-major order. `len` must
 * equal `rows * cols` as reported by [`ts_model_shape`].
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` writable
 * doubles.
 */
enum TsStatus ts_model_copy(const struct TsModel *model, double *out, size_t len);

/**
 * Stationary distribution over expanded states, written to `out`. `len` must
 * equal the row count from [`ts_model_shape`]. Fails on reducible chains;
 * regularize first if irreducibility is not guaranteed.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` writable
 * doubles.
 */
enum TsStatus ts_stationary(const struct TsModel *model, double *out, size_t len);

/**
 * Potential landscape `-ln(pi)` over expanded states; states with zero
 * stationary mass map to infinity. `len` as in [`ts_stationary`].
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` writable
 * doubles.
 */
enum TsStatus ts_potential(const struct TsModel *model, double *out, size_t len);

/**
 * Total-variation mixing time: the first step at which every row of the
 * iterated kernel is within `epsilon` of the stationary distribution.
 * Writes the step count, or `UINT64_MAX` if the chain has not mixed within
 * `cap` steps.
 *
 * # Safety
 * `model` must be a live handle and `out_steps` a writable location.
 */
enum TsStatus ts_mixing_time(const struct TsModel *model,
                             double epsilon,
                             uint64_t cap,
                             uint64_t *out_steps);

/**
 * Mean first-passage times between all expanded states, row-major: entry
 * `(i, j)` is the expected steps from `i` to the first visit of `j`, with
 * zeros on the diagonal. `len` must equal `rows * rows`.
 *
 * # Safety
 * `model` must be a live handle and `out` must point to `len` writable
 * doubles.
 */
enum TsStatus ts_mfpt(const struct TsModel *model, double *out, size_t len);

/**
 * Kemeny constant: the start-independent expected passage time to a
 * stationary-weighted random target.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable location.
 */
enum TsStatus ts_kemeny(const struct TsModel *model, double *out);

/**
 * Shorrocks mobility index. `raw` is `(n - trace) / (n - 1)`; `clamped`
 * truncates it to `[0, 1]`. Either output pointer may be null to skip it,
 * but not both.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum TsStatus ts_shorrocks(const struct TsModel *model, double *raw, double *clamped);

/**
 * Detailed-balance violation of the chain under its stationary distribution.
 * `total` is the summed absolute net probability flow over unordered state
 * pairs; `normalized` divides by total flow. Either output pointer may be
 * null to skip it, but not both. Fails on reducible chains.
 *
 * # Safety
 * `model` must be a live handle; non-null outputs must be writable.
 */
enum TsStatus ts_curl(const struct TsModel *model, double *total, double *normalized);

/**
 * Expected recovery time after a transient shock: the population starts at
 * the stationary distribution of `pre`, evolves `applications` steps under
 * `shock`, then relaxes under `pre` until within `epsilon` total variation
 * of where it started. Writes the relaxation step count, or `UINT64_MAX` if
 * recovery does not happen within `cap` steps. The models must agree on
 * state count and order.
 *
 * # Safety
 * `pre` and `shock` must be live handles and `out_steps` writable.
 */
enum TsStatus ts_recovery_time(const struct TsModel *pre,
                               const struct TsModel *shock,
                               double epsilon,
                               uint32_t applications,
                               uint64_t cap,
                               uint64_t *out_steps);

/**
 * Load a longitudinal panel from a CSV file. Identity columns follow the
 * default schema (`household_id`, `year`, optional `weight`); `dims` names
 * the welfare-dimension columns as a comma-separated list, e.g.
 * `"income,health"`. Pass null for the default `income,health,education`.
 *
 * # Safety
 * `path` and a non-null `dims` must be NUL-terminated strings, and `out`
 * must be a writable panel pointer. On success `*out` owns a new panel;
 * release it with [`ts_panel_free`].
 */
enum TsStatus ts_panel_load_csv(const char *path, const char *dims, struct TsPanel **out);

/**
 * Release a panel created by this library. Null is a no-op.
 *
 * # Safety
 * `panel` must be null or a pointer previously returned through
 * [`ts_panel_load_csv`] and not yet freed.
 */
void ts_panel_free(struct TsPanel *panel);

/**
 * Number of households in the panel.
 *
 * # Safety
 * `panel` must be a live handle and `out` a writable location.
 */
enum TsStatus ts_panel_households(const struct TsPanel *panel, size_t *out);

/**
 * Number of accepted household-wave observations in the panel.
 *
 * # Safety
 * `panel` must be a live handle and `out` a writable location.
 */
enum TsStatus ts_panel_observations(const struct TsPanel *panel, size_t *out);

/**
 * Number of welfare dimensions the panel carries.
 *
 * # Safety
 * `panel` must be a live handle and `out` a writable location.
 */
enum TsStatus ts_panel_dimensions(const struct TsPanel *panel, size_t *out);

/**
 * Discretize a panel and estimate a transition model in one step. `bins`
 * gives the per-dimension bin counts in the panel's column order: a positive
 * count fits equal-width bins over the observed range, zero fits one bin per
 * distinct observed level (for ordinal scales). `n_dims` must match
 * [`ts_panel_dimensions`]. `eta > 0` adds that pseudo-weight to every
 * transition so the estimated chain is irreducible; `eta = 0` keeps the raw
 * maximum-likelihood estimate.
 *
 * # Safety
 * `panel` must be a live handle, `bins` must point to `n_dims` readable
 * values, and `out` must be a writable model pointer. On success `*out` owns
 * a new model; release it with [`ts_model_free`].
 */
enum TsStatus ts_panel_estimate(const struct TsPanel *panel,
                                const size_t *bins,
                                size_t n_dims,
                                size_t order,
                                double eta,
                                struct TsModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
