#ifndef RISDMA_H
#define RISDMA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum RisdmaStatus {
  RISDMA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  RISDMA_STATUS_NULL_POINTER = 1,
  /**
   * An argument or configuration value is out of range.
   */
  RISDMA_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Dimensions of inputs disagree.
   */
  RISDMA_STATUS_DIMENSION_MISMATCH = 3,
  /**
   * A numerical routine failed (singular matrix, no convergence, ...).
   */
  RISDMA_STATUS_NUMERICAL = 4,
  /**
   * Configuration text could not be parsed.
   */
  RISDMA_STATUS_CONFIG = 5,
  RISDMA_STATUS_IO = 6,
  /**
   * A caller-provided buffer is too small; the required length is
   * reported through the length out-parameter.
   */
  RISDMA_STATUS_BUFFER_TOO_SMALL = 7,
  /**
   * Internal error; the library caught a panic.
   */
  RISDMA_STATUS_INTERNAL = 8,
} RisdmaStatus;

typedef enum RisdmaCsiMode {
  RISDMA_CSI_MODE_FULL = 0,
  RISDMA_CSI_MODE_PARTIAL = 1,
} RisdmaCsiMode;

/**
 * DMA weight set, or the fully digital receiver.
 */
typedef enum RisdmaReceiver {
  RISDMA_RECEIVER_UNCONSTRAINED = 0,
  RISDMA_RECEIVER_AMPLITUDE_ONLY = 1,
  RISDMA_RECEIVER_BINARY_AMPLITUDE = 2,
  RISDMA_RECEIVER_LORENTZIAN_PHASE = 3,
  RISDMA_RECEIVER_CONVENTIONAL = 4,
} RisdmaReceiver;

/**
 * Outcome of an optimization run.
 */
typedef struct RisdmaResult RisdmaResult;

/**
 * Channels and constraints at one operating point.
 */
typedef struct RisdmaScenario RisdmaScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *risdma_version(void);

/**
 * Message of the last failing call on this thread, or null if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *risdma_last_error_message(void);

/**
 * Builds a scenario from configuration text (empty text gives the
 * defaults) at one seed, power budget (dBm) and SAR budget (W/kg).
 *
 * # Safety
 * `config` must be null or a NUL-terminated string; `out` must be a valid
 * pointer to writable storage.
 */
enum RisdmaStatus risdma_scenario_new(const char *config,
                                      uint64_t seed,
                                      double pmax_dbm,
                                      double sar_budget,
                                      struct RisdmaScenario **out);

/**
 * # Safety
 * `scenario` must be null or a handle from [`risdma_scenario_new`] not yet
 * freed.
 */
void risdma_scenario_free(struct RisdmaScenario *scenario);

/**
 * Runs the alternating optimization on `scenario`. `csi` takes a
 * `RisdmaCsiMode` value and `receiver` a `RisdmaReceiver` value; with
 * `optimize_phase` false the RIS phases stay at 1.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be valid for writes.
 */
enum RisdmaStatus risdma_optimize(const struct RisdmaScenario *scenario,
                                  uint32_t csi,
                                  uint32_t receiver,
                                  bool optimize_phase,
                                  struct RisdmaResult **out);

/**
 * # Safety
 * `result` must be null or a handle from [`risdma_optimize`] not yet freed.
 */
void risdma_result_free(struct RisdmaResult *result);

/**
 * Final objective in bit/s/Hz (SE under full CSI, its deterministic
 * equivalent under partial CSI).
 *
 * # Safety
 * `result` must be a live handle; `se_bits` must be valid for writes.
 */
enum RisdmaStatus risdma_result_se(const struct RisdmaResult *result, double *se_bits);

/**
 * Number of outer iterations and whether the run met its tolerance.
 *
 * # Safety
 * `result` must be a live handle; the out-pointers must be valid for writes.
 */
enum RisdmaStatus risdma_result_status(const struct RisdmaResult *result,
                                       size_t *iterations,
                                       bool *converged);

/**
 * Copies the objective trace (bit/s/Hz, initial value first) into `buf`.
 * `len` holds the capacity on entry and the trace length on exit; a null
 * `buf` only queries the length.
 *
 * # Safety
 * `result` must be a live handle; `len` must be valid; `buf` must be null
 * or valid for `*len` writes.
 */
enum RisdmaStatus risdma_result_trace(const struct RisdmaResult *result, double *buf, size_t *len);

/**
 * Per-user transmit powers `tr(Q_k)` in watts; same buffer protocol as
 * [`risdma_result_trace`].
 *
 * # Safety
 * As for [`risdma_result_trace`].
 */
enum RisdmaStatus risdma_result_powers(const struct RisdmaResult *result, double *buf, size_t *len);

/**
 * Runs the experiment in the configuration file `config_path` and writes
 * its CSV to `out_path` (null: the configured or default location).
 * `jobs` = 0 uses one worker per CPU. Returns `Numerical` if any run
 * failed; the CSV is written either way.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out_path` null or one.
 */
enum RisdmaStatus risdma_run_experiment(const char *config_path, const char *out_path, size_t jobs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISDMA_H */
