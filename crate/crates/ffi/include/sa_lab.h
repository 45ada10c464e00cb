#ifndef SA_LAB_H
#define SA_LAB_H

/* Generated by cbindgen from the sa-lab-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Step-size family selector.
 */
typedef enum SaScheduleFamily {
  /**
   * `alpha_t = c / (t+3)^nu` with `nu` in `(2/3, 1]`.
   */
  SA_SCHEDULE_FAMILY_POLY = 0,
  /**
   * `alpha_t = c / ((t+3) * ln^nu(t+3))` with `nu` in `(0, 1)`.
   */
  SA_SCHEDULE_FAMILY_POLY_LOG = 1,
} SaScheduleFamily;

/**
 * Result of an API call; `SA_STATUS_OK` is zero and every failure is
 * nonzero.
 */
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SA_STATUS_NULL_POINTER = 1,
  /**
   * An argument was rejected (malformed JSON, an exponent outside its
   * family's range, a buffer of the wrong length, ...).
   */
  SA_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A string argument was not valid UTF-8.
   */
  SA_STATUS_INVALID_UTF8 = 3,
  /**
   * The computation itself failed, e.g. the iterate left the finite
   * range.
   */
  SA_STATUS_RUN_FAILED = 4,
  /**
   * A library bug: an internal panic was caught at the boundary.
   */
  SA_STATUS_PANIC = 5,
} SaStatus;

/**
 * Opaque update-map handle: an update rule together with its noise chain,
 * exact fixed point, and contraction modulus.
 */
typedef struct SaMap SaMap;

/**
 * Opaque tabular MDP handle.
 */
typedef struct SaMdp SaMdp;

/**
 * Opaque trajectory handle: geometrically spaced error checkpoints and the
 * final iterate of one run.
 */
typedef struct SaRecord SaRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *sa_version(void);

/**
 * Message from the most recent failed call on this thread, or an empty
 * string if none failed yet. The pointer stays valid until the next failed
 * call on the same thread.
 */
const char *sa_last_error(void);

/**
 * Frees a string returned by this library, e.g. by `sa_mdp_to_json`.
 * Accepts null.
 */
void sa_string_free(char *s);

/**
 * Parses an MDP from a JSON object with fields `n_states`, `n_actions`,
 * `gamma`, `reward` (one row per state, one column per action) and
 * `transition` (indexed `[action][state][next_state]`, rows summing to
 * one).
 */
enum SaStatus sa_mdp_from_json(const char *json, struct SaMdp **out);

/**
 * Draws an MDP with uniform rewards in `[0, 1)` and flat-Dirichlet
 * transition rows, deterministically from `seed`.
 */
enum SaStatus sa_mdp_random(size_t n_states,
                            size_t n_actions,
                            double gamma,
                            uint64_t seed,
                            struct SaMdp **out);

/**
 * Serializes an MDP to a JSON string accepted by `sa_mdp_from_json`.
 * Returns null if `mdp` is null; free the result with `sa_string_free`.
 */
char *sa_mdp_to_json(const struct SaMdp *mdp);

/**
 * Number of states, or 0 if `mdp` is null.
 */
size_t sa_mdp_n_states(const struct SaMdp *mdp);

/**
 * Number of actions, or 0 if `mdp` is null.
 */
size_t sa_mdp_n_actions(const struct SaMdp *mdp);

/**
 * Discount factor, or NaN if `mdp` is null.
 */
double sa_mdp_gamma(const struct SaMdp *mdp);

/**
 * Frees an MDP handle. Accepts null.
 */
void sa_mdp_free(struct SaMdp *mdp);

/**
 * Builds the synchronous Q-learning map for `mdp` under a behavior policy
 * given row-major as `n_states * n_actions` probabilities (rows summing to
 * one). Pass `mu = NULL` for the uniform policy. The behavior policy must
 * play every action with positive probability and its induced state chain
 * must visit every state.
 */
enum SaStatus sa_map_q(const struct SaMdp *mdp,
                       const double *mu,
                       size_t mu_len,
                       struct SaMap **out);

/**
 * Builds the off-policy TD(0) evaluation map for target policy `pi` under
 * behavior policy `mu`, both row-major `n_states * n_actions` probability
 * tables; either may be NULL for the uniform policy. Every action `pi`
 * plays must also be played by `mu`.
 */
enum SaStatus sa_map_td(const struct SaMdp *mdp,
                        const double *mu,
                        size_t mu_len,
                        const double *pi,
                        size_t pi_len,
                        struct SaMap **out);

/**
 * Iterate dimension (`n_states * n_actions` for Q-learning, `n_states` for
 * TD), or 0 if `map` is null.
 */
size_t sa_map_dim(const struct SaMap *map);

/**
 * Contraction modulus of the averaged update in its own norm, or NaN if
 * `map` is null.
 */
double sa_map_kappa(const struct SaMap *map);

/**
 * Copies the exact fixed point into `out`, which must hold `len ==
 * sa_map_dim(map)` doubles.
 */
enum SaStatus sa_map_fixed_point(const struct SaMap *map, double *out, size_t len);

/**
 * Frees an update-map handle. Accepts null.
 */
void sa_map_free(struct SaMap *map);

/**
 * Runs `steps` updates of the stochastic approximation iteration from the
 * zero iterate, with the noise chain started from its stationary law.
 * Runs are reproducible: the same map, schedule, steps, and seed give a
 * bit-identical trajectory. Fails with `SA_STATUS_RUN_FAILED` if the
 * iterate leaves the finite range.
 */
enum SaStatus sa_run(const struct SaMap *map,
                     enum SaScheduleFamily family,
                     double c_alpha,
                     double nu,
                     uint64_t steps,
                     uint64_t seed,
                     struct SaRecord **out);

/**
 * Number of recorded checkpoints, or 0 if `record` is null.
 */
size_t sa_record_num_checkpoints(const struct SaRecord *record);

/**
 * Iterate dimension of the recorded run, or 0 if `record` is null.
 */
size_t sa_record_dim(const struct SaRecord *record);

/**
 * Reads checkpoint `index`: the step count into `t_out` and the squared
 * error `||w_t - w*||^2` (in the map's contraction norm) into
 * `error_sq_out`. Either output pointer may be null to skip that field.
 * Checkpoint times are geometrically spaced and the last one always equals
 * the run length.
 */
enum SaStatus sa_record_checkpoint(const struct SaRecord *record,
                                   size_t index,
                                   uint64_t *t_out,
                                   double *error_sq_out);

/**
 * Squared error of the final iterate, or NaN if `record` is null.
 */
double sa_record_final_error_sq(const struct SaRecord *record);

/**
 * Copies the final iterate into `out`, which must hold `len ==
 * sa_record_dim(record)` doubles.
 */
enum SaStatus sa_record_final_iterate(const struct SaRecord *record, double *out, size_t len);

/**
 * Frees a trajectory handle. Accepts null.
 */
void sa_record_free(struct SaRecord *record);

/**
 * Computes the first `count` anchor intervals of the step-size schedule.
 * For interval `m` in `0..count`, `anchors_out[m]` receives `t_{m+1}` (the
 * first step index after the interval, with `t_0 = 0`) and
 * `bar_alpha_out[m]` the realized step mass over `[t_m, t_{m+1})`. Either
 * output may be null to skip it. Deterministic in all arguments.
 */
enum SaStatus sa_anchor_table(enum SaScheduleFamily family,
                              double c_alpha,
                              double nu,
                              size_t count,
                              uint64_t *anchors_out,
                              double *bar_alpha_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SA_LAB_H */
