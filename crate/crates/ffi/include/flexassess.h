#ifndef FLEXASSESS_H
#define FLEXASSESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum FaStatus {
  FA_STATUS_OK = 0,
  FA_STATUS_NULL_ARGUMENT = 1,
  FA_STATUS_INVALID_ARGUMENT = 2,
  FA_STATUS_PARSE = 3,
  FA_STATUS_SOLVER = 4,
  FA_STATUS_INFEASIBLE = 5,
  FA_STATUS_IO = 6,
  FA_STATUS_PANIC = 7,
} FaStatus;

/**
 * Result of one window assessment, including the certified policy.
 */
typedef struct FaAssessment FaAssessment;

/**
 * Identified control model.
 */
typedef struct FaModel FaModel;

/**
 * One assessment window. All arrays are read, never retained.
 */
typedef struct FaWindow {
  /**
   * Steps in the window; the DR request covers all of them.
   */
  size_t horizon;
  /**
   * Initial model state, `n` entries.
   */
  const double *x0;
  size_t x0_len;
  /**
   * Nominal grid power per step, W.
   */
  const double *w_bar;
  /**
   * PV upper bound per step, W.
   */
  const double *pv_bound;
  /**
   * Forecast `[ambient °C, irradiance W/m²]` per step, `2 * horizon` entries.
   */
  const double *d_forecast;
  double comfort_low_c;
  double comfort_high_c;
  double power_cap_w;
  double delta_ambient_c;
  double delta_irradiance_wm2;
  /**
   * `γ₂ = ratio·γ₁`.
   */
  double gamma2_ratio;
} FaWindow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *fa_version(void);

/**
 * Copies the last error message of this thread into `buf` (truncated and always
 * NUL-terminated when `cap > 0`). Returns the buffer size the full message needs.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t fa_last_error(char *buf, size_t cap);

/**
 * The bundled second-order model, identified from the bundled plant.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum FaStatus fa_model_bundled(struct FaModel **out);

/**
 * Parses a model from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum FaStatus fa_model_from_json(const char *json, struct FaModel **out);

/**
 * Serializes a model; release the string with [`fa_string_free`].
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FaStatus fa_model_to_json(const struct FaModel *model, char **out);

/**
 * State dimension of the model, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fa_model_state_dim(const struct FaModel *model);

/**
 * Index of the room temperature within the state vector.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t fa_model_room_index(const struct FaModel *model);

/**
 * One model step: `x_next = A x + B u + R w + D d`.
 *
 * # Safety
 * `x` and `x_next` must hold `n` values, `d` two.
 */
enum FaStatus fa_model_step(const struct FaModel *model,
                            const double *x,
                            double u_w,
                            double w_w,
                            const double *d,
                            double *x_next);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void fa_model_free(struct FaModel *model);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void fa_string_free(char *s);

/**
 * Largest robustly deliverable uniform reduction `γ₁*` for one window, with its policy.
 * An infeasible window is not an error: the handle reports `feasible = false`.
 *
 * # Safety
 * `model` must be a live handle, `window` valid with arrays of the stated sizes,
 * `out` writable.
 */
enum FaStatus fa_assess(const struct FaModel *model,
                        const struct FaWindow *window,
                        struct FaAssessment **out);

/**
 * # Safety
 * `a` must be null or a live handle.
 */
double fa_assessment_gamma1(const struct FaAssessment *a);

/**
 * # Safety
 * `a` must be null or a live handle.
 */
double fa_assessment_gamma2(const struct FaAssessment *a);

/**
 * # Safety
 * `a` must be null or a live handle.
 */
bool fa_assessment_feasible(const struct FaAssessment *a);

/**
 * # Safety
 * `a` must be null or a live handle.
 */
size_t fa_assessment_horizon(const struct FaAssessment *a);

/**
 * PV action of the certified policy at `step` for a realized request `w_tilde`
 * (`h` entries) and forecast errors `d_tilde` (`2 * horizon` entries, only those
 * before `step` are read).
 *
 * # Safety
 * `a` must be a live handle, the arrays of the stated sizes and `u_w` writable.
 */
enum FaStatus fa_assessment_action(const struct FaAssessment *a,
                                   size_t step,
                                   const double *w_tilde,
                                   size_t w_len,
                                   const double *d_tilde,
                                   size_t d_len,
                                   double *u_w);

/**
 * # Safety
 * `a` must be null or a handle not yet freed.
 */
void fa_assessment_free(struct FaAssessment *a);

/**
 * Runs the randomized duality and vertex-oracle checks; `passed` receives the number
 * of instances that pass every check.
 *
 * # Safety
 * `passed` must be writable.
 */
enum FaStatus fa_verify(size_t instances, uint64_t seed, size_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXASSESS_H */
