#ifndef TSAC_H
#define TSAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum TsacStatus {
  TSAC_STATUS_OK = 0,
  TSAC_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Unparseable JSON or an invalid configuration.
   */
  TSAC_STATUS_PARSE = 2,
  /**
   * The negative-definiteness margin is not positive at some probe.
   */
  TSAC_STATUS_ASSUMPTION_VIOLATED = 3,
  TSAC_STATUS_RUNTIME = 4,
  TSAC_STATUS_NULL_POINTER = 5,
  TSAC_STATUS_PANIC = 6,
} TsacStatus;

typedef enum TsacMode {
  TSAC_MODE_TWO_TIMESCALE = 0,
  TSAC_MODE_DECOUPLED = 1,
} TsacMode;

/**
 * Resolved problem instance (MDP, policy class, features, schedule).
 */
typedef struct TsacProblem TsacProblem;

/**
 * Metrics of one finished run.
 */
typedef struct TsacRun TsacRun;

/**
 * One logged checkpoint.
 */
typedef struct TsacCheckpoint {
  uint64_t step;
  uint64_t samples;
  double grad_j_sq;
  double critic_err_sq;
  double eta_err_sq;
  double j_value;
  double eta;
  double omega_norm;
} TsacCheckpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *tsac_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tsac_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library that has not been freed.
 */
void tsac_string_free(char *s);

/**
 * Builds a problem from a run-configuration JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum TsacStatus tsac_problem_from_json(const char *json, struct TsacProblem **out);

/**
 * Releases a problem. Null is ignored.
 *
 * # Safety
 * `p` must be null or a live handle from [`tsac_problem_from_json`].
 */
void tsac_problem_free(struct TsacProblem *p);

/**
 * Dimensions of the problem: states, actions, critic features, policy parameters.
 *
 * # Safety
 * `p` must be a live handle; each out-pointer must be valid or null.
 */
enum TsacStatus tsac_problem_dims(const struct TsacProblem *p,
                                  size_t *n_states,
                                  size_t *n_actions,
                                  size_t *d,
                                  size_t *d_theta);

/**
 * Smallest margin over the probe set and the projection radius in use.
 *
 * # Safety
 * `p` must be a live handle; each out-pointer must be valid or null.
 */
enum TsacStatus tsac_problem_margins(const struct TsacProblem *p,
                                     double *lambda_min,
                                     double *r_omega);

/**
 * Exact oracle quantities at `theta` as a JSON document.
 *
 * # Safety
 * `theta` must point to `len` doubles; `out` must be a valid pointer. The
 * returned string is released with [`tsac_string_free`].
 */
enum TsacStatus tsac_problem_oracle_json(const struct TsacProblem *p,
                                         const double *theta,
                                         size_t len,
                                         char **out);

/**
 * Runs one seed with the problem's configured length and cadence.
 *
 * For [`TsacMode::Decoupled`] the configured sample budget and critic schedule apply.
 *
 * # Safety
 * `p` must be a live handle; `out` must be a valid pointer.
 */
enum TsacStatus tsac_problem_run(const struct TsacProblem *p,
                                 uint64_t seed,
                                 enum TsacMode mode,
                                 struct TsacRun **out);

/**
 * Releases a run. Null is ignored.
 *
 * # Safety
 * `r` must be null or a live handle from [`tsac_problem_run`].
 */
void tsac_run_free(struct TsacRun *r);

/**
 * Number of checkpoints in a run; 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
size_t tsac_run_checkpoint_count(const struct TsacRun *r);

/**
 * Environment samples consumed by a run; 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live handle.
 */
uint64_t tsac_run_samples(const struct TsacRun *r);

/**
 * Copies checkpoint `index` into `out`.
 *
 * # Safety
 * `r` must be a live handle; `out` must be a valid pointer.
 */
enum TsacStatus tsac_run_checkpoint(const struct TsacRun *r,
                                    size_t index,
                                    struct TsacCheckpoint *out);

/**
 * The run's checkpoint table in the CLI's CSV format.
 *
 * # Safety
 * `r` must be a live handle; `out` must be a valid pointer. The returned
 * string is released with [`tsac_string_free`].
 */
enum TsacStatus tsac_run_csv(const struct TsacRun *r, char **out);

/**
 * Generates a random smoothed MDP and returns it as JSON.
 *
 * # Safety
 * `out` must be a valid pointer. The returned string is released with
 * [`tsac_string_free`].
 */
enum TsacStatus tsac_mdp_generate_json(size_t n_states,
                                       size_t n_actions,
                                       double smoothing,
                                       uint64_t seed,
                                       char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TSAC_H */
