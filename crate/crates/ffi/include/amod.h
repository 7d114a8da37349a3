#ifndef AMOD_H
#define AMOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AmodStatus {
  AMOD_STATUS_OK = 0,
  AMOD_STATUS_NULL_POINTER = 1,
  AMOD_STATUS_INVALID_ARGUMENT = 2,
  AMOD_STATUS_BUFFER_TOO_SMALL = 3,
  AMOD_STATUS_IO = 4,
  AMOD_STATUS_ENVIRONMENT = 5,
  AMOD_STATUS_EPISODE_DONE = 6,
  AMOD_STATUS_PANIC = 7,
} AmodStatus;

/**
 * Simulator bound to a scenario, with the current observation.
 */
typedef struct AmodEnv AmodEnv;

/**
 * Trained policy restored from a checkpoint.
 */
typedef struct AmodPolicy AmodPolicy;

/**
 * Loaded or generated scenario.
 */
typedef struct AmodScenario AmodScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t amod_last_error(char *buf, size_t len);

/**
 * Loads a scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AmodStatus amod_scenario_load(const char *path, struct AmodScenario **out);

/**
 * Generates a synthetic scenario from a JSON spec (missing fields take
 * their defaults; null means all defaults).
 *
 * # Safety
 * `spec_json` must be null or NUL-terminated; `out` must be valid.
 */
enum AmodStatus amod_scenario_synthetic(const char *spec_json,
                                        uint64_t seed,
                                        struct AmodScenario **out);

/**
 * Station count, fleet size and episode length.
 *
 * # Safety
 * `scenario` must come from this library; output pointers may be null.
 */
enum AmodStatus amod_scenario_dims(const struct AmodScenario *scenario,
                                   size_t *n_stations,
                                   uint32_t *fleet_size,
                                   size_t *episode_len);

/**
 * # Safety
 * `scenario` must be null or come from this library, and not be used again.
 */
void amod_scenario_free(struct AmodScenario *scenario);

/**
 * Creates an environment; the scenario handle may be freed afterwards.
 *
 * # Safety
 * `scenario` must come from this library; `out` must be valid.
 */
enum AmodStatus amod_env_new(const struct AmodScenario *scenario,
                             double forecast_sigma,
                             struct AmodEnv **out);

/**
 * Starts an episode with the given seed.
 *
 * # Safety
 * `env` must come from this library.
 */
enum AmodStatus amod_env_reset(struct AmodEnv *env, uint64_t seed);

/**
 * Applies a desired distribution of `len` entries and advances one step.
 * `reward_cents` and `done` may be null.
 *
 * # Safety
 * `action` must point to `len` readable doubles.
 */
enum AmodStatus amod_env_step(struct AmodEnv *env,
                              const double *action,
                              size_t len,
                              int64_t *reward_cents,
                              bool *done);

/**
 * Writes idle vehicle counts per station into `buf` (`len` ≥ stations).
 *
 * # Safety
 * `buf` must point to `len` writable u32 values.
 */
enum AmodStatus amod_env_idle(const struct AmodEnv *env, uint32_t *buf, size_t len);

/**
 * # Safety
 * `env` must be null or come from this library, and not be used again.
 */
void amod_env_free(struct AmodEnv *env);

/**
 * Restores a policy from a checkpoint file; `seed` drives sampled actions.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be valid.
 */
enum AmodStatus amod_policy_load(const char *path, uint64_t seed, struct AmodPolicy **out);

/**
 * Desired distribution for the environment's current observation: the
 * Dirichlet mean when `sample` is false, a draw otherwise.
 *
 * # Safety
 * `action` must point to `len` writable doubles.
 */
enum AmodStatus amod_policy_act(struct AmodPolicy *policy,
                                const struct AmodEnv *env,
                                bool sample,
                                double *action,
                                size_t len);

/**
 * # Safety
 * `policy` must be null or come from this library, and not be used again.
 */
void amod_policy_free(struct AmodPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMOD_H */
