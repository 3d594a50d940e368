#ifndef APALM_H
#define APALM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of an interface call.
 */
typedef enum ApalmStatus {
  APALM_STATUS_OK = 0,
  APALM_STATUS_NULL_POINTER = 1,
  APALM_STATUS_INVALID_UTF8 = 2,
  APALM_STATUS_BUFFER_TOO_SMALL = 3,
  APALM_STATUS_CONFIG = 10,
  APALM_STATUS_IO = 11,
  APALM_STATUS_DIMENSION = 12,
  APALM_STATUS_NON_FINITE_GRADIENT = 13,
  APALM_STATUS_UNBOUNDED = 14,
  APALM_STATUS_STEPSIZE_DOMAIN = 15,
  APALM_STATUS_STALENESS = 16,
  APALM_STATUS_STAGNATION = 17,
  APALM_STATUS_MONITORING_WINDOW = 18,
  APALM_STATUS_WORKER_PANIC = 19,
  APALM_STATUS_INTERNAL = 99,
} ApalmStatus;

/*
 A parsed experiment configuration.
 */
typedef struct ApalmConfig ApalmConfig;

/*
 A finished run.
 */
typedef struct ApalmRun ApalmRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the next call.
 */
const char *apalm_last_error(void);

/*
 Reads a TOML experiment file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ApalmStatus apalm_config_load(const char *path, struct ApalmConfig **out);

/*
 Sets the worker count of a parallel configuration; fails on a replay one.

 # Safety
 `cfg` must come from [`apalm_config_load`].
 */
enum ApalmStatus apalm_config_set_workers(struct ApalmConfig *cfg, size_t workers);

/*
 Caps the number of iterations.

 # Safety
 `cfg` must come from [`apalm_config_load`].
 */
enum ApalmStatus apalm_config_set_max_iters(struct ApalmConfig *cfg, uint64_t max_iters);

/*
 # Safety
 `cfg` must come from [`apalm_config_load`] or be NULL.
 */
void apalm_config_free(struct ApalmConfig *cfg);

/*
 Runs the experiment. Output files are not written.

 # Safety
 `cfg` must come from [`apalm_config_load`] and `out` be a valid pointer.
 */
enum ApalmStatus apalm_run(const struct ApalmConfig *cfg, struct ApalmRun **out);

/*
 Writes the trace, summary and (parallel) schedule to the configured paths.

 # Safety
 `run` must come from [`apalm_run`].
 */
enum ApalmStatus apalm_run_write(const struct ApalmRun *run);

/*
 Process exit code the command-line tool would report: 0, 2 or 3.

 # Safety
 `run` must come from [`apalm_run`].
 */
int32_t apalm_run_exit_code(const struct ApalmRun *run);

/*
 # Safety
 `run` must come from [`apalm_run`].
 */
uint64_t apalm_run_iterations(const struct ApalmRun *run);

/*
 Final objective value, or NaN for a NULL handle.

 # Safety
 `run` must come from [`apalm_run`].
 */
double apalm_run_objective(const struct ApalmRun *run);

/*
 Final stationarity residual used by the stopping rule.

 # Safety
 `run` must come from [`apalm_run`].
 */
double apalm_run_residual(const struct ApalmRun *run);

/*
 Number of doubles in the final point.

 # Safety
 `run` must come from [`apalm_run`].
 */
size_t apalm_run_point_len(const struct ApalmRun *run);

/*
 Copies the final point, blocks concatenated, into `buf`.

 # Safety
 `run` must come from [`apalm_run`]; `buf` must hold `len` doubles.
 */
enum ApalmStatus apalm_run_point(const struct ApalmRun *run, double *buf, size_t len);

/*
 The trace as CSV text. Free with [`apalm_string_free`].

 # Safety
 `run` must come from [`apalm_run`] and `out` be a valid pointer.
 */
enum ApalmStatus apalm_run_trace_csv(const struct ApalmRun *run, char **out);

/*
 # Safety
 `s` must come from this library or be NULL.
 */
void apalm_string_free(char *s);

/*
 # Safety
 `run` must come from [`apalm_run`] or be NULL.
 */
void apalm_run_free(struct ApalmRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* APALM_H */
