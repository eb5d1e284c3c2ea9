#ifndef ADANET_H
#define ADANET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Algorithms with a closed-form multiplication count.
typedef enum AdanetAlgorithm {
  ADANET_ALGORITHM_USUP = 0,
  ADANET_ALGORITHM_LS_ALG = 1,
  ADANET_ALGORITHM_MSD_ALG = 2,
} AdanetAlgorithm;

// Result of a fallible call.
typedef enum AdanetStatus {
  ADANET_STATUS_OK = 0,
  ADANET_STATUS_NULL_POINTER = 1,
  ADANET_STATUS_INVALID_UTF8 = 2,
  // Unknown scenario, bad JSON, bad override or an invalid configuration.
  ADANET_STATUS_CONFIG = 3,
  // A run failed for a reason other than divergence.
  ADANET_STATUS_SIMULATION = 4,
  // Some estimate or the theory recursion became non-finite.
  ADANET_STATUS_DIVERGED = 5,
  // Protocol not part of the result, or an output buffer too small.
  ADANET_STATUS_OUT_OF_RANGE = 6,
  ADANET_STATUS_PANIC = 7,
} AdanetStatus;

// Ensemble result handle.
typedef struct AdanetResult AdanetResult;

// Scenario configuration handle.
typedef struct AdanetScenario AdanetScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *adanet_last_error(void);

// Library version as a static NUL-terminated string.
const char *adanet_version(void);

// Multiplications per node and iteration spent on cooperation.
uint64_t adanet_multiplication_count(enum AdanetAlgorithm algorithm,
                                     uint64_t order,
                                     uint64_t neighborhood);

// Loads a shipped scenario (`example1` … `example6`) or a JSON config file path.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum AdanetStatus adanet_scenario_load(const char *name, struct AdanetScenario **out);

// Parses a scenario from JSON text.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum AdanetStatus adanet_scenario_from_json(const char *json, struct AdanetScenario **out);

// Applies one `dotted.key=value` override; the scenario is unchanged on error.
//
// # Safety
// `scenario` must come from this library; `assignment` must be NUL-terminated.
enum AdanetStatus adanet_scenario_set(struct AdanetScenario *scenario, const char *assignment);

// Applies `count` overrides as one batch, validating only the end result, so
// e.g. a shorter horizon and its probe iterations can change together.
//
// # Safety
// `scenario` must come from this library; `assignments` must point to `count`
// NUL-terminated strings.
enum AdanetStatus adanet_scenario_set_many(struct AdanetScenario *scenario,
                                           const char *const *assignments,
                                           size_t count);

// Number of nodes in the scenario, 0 for a null handle.
//
// # Safety
// `scenario` must be null or come from this library.
size_t adanet_scenario_nodes(const struct AdanetScenario *scenario);

// Scenario as JSON; release with [`adanet_string_free`]. Null on error.
//
// # Safety
// `scenario` must be null or come from this library.
char *adanet_scenario_to_json(const struct AdanetScenario *scenario);

// # Safety
// `scenario` must be null or come from this library and not be used afterwards.
void adanet_scenario_free(struct AdanetScenario *scenario);

// # Safety
// `s` must be null or a string returned by this library.
void adanet_string_free(char *s);

// Runs the Monte Carlo ensemble of `scenario`.
//
// # Safety
// `scenario` must come from this library and `out` be a valid pointer.
enum AdanetStatus adanet_run(const struct AdanetScenario *scenario, struct AdanetResult **out);

// # Safety
// `result` must be null or come from this library and not be used afterwards.
void adanet_result_free(struct AdanetResult *result);

// Per-node steady-state MSD in dB (default window) for `protocol`
// (`noncooperative`, `usup`, `ls_alg`, …). `written` receives the node count.
//
// # Safety
// Pointers must be valid; `out` must hold `capacity` doubles.
enum AdanetStatus adanet_result_steady_state_db(const struct AdanetResult *result,
                                                const char *protocol,
                                                double *out,
                                                size_t capacity,
                                                size_t *written);

// Network MSD in dB per recorded point for `protocol`.
//
// # Safety
// Pointers must be valid; `out` must hold `capacity` doubles.
enum AdanetStatus adanet_result_network_msd_db(const struct AdanetResult *result,
                                               const char *protocol,
                                               double *out,
                                               size_t capacity,
                                               size_t *written);

// Predicted U-sup network MSD in dB for each of `iterations` steps.
//
// # Safety
// Pointers must be valid; `out` must hold `capacity` doubles.
enum AdanetStatus adanet_theory_network_msd_db(const struct AdanetScenario *scenario,
                                               size_t iterations,
                                               double *out,
                                               size_t capacity,
                                               size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADANET_H */
