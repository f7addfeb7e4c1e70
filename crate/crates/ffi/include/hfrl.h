#ifndef HFRL_H
#define HFRL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum HfrlStatus {
  HFRL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HFRL_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  HFRL_STATUS_INVALID_UTF8 = 2,
  /**
   * A configuration could not be parsed or violates its invariants.
   */
  HFRL_STATUS_CONFIG = 3,
  /**
   * An argument was out of range or a call was made out of order.
   */
  HFRL_STATUS_USAGE = 4,
  HFRL_STATUS_IO = 5,
  /**
   * A session log failed its audit.
   */
  HFRL_STATUS_INTEGRITY = 6,
  /**
   * Any other engine error.
   */
  HFRL_STATUS_FAILED = 7,
  /**
   * The engine panicked; the handle arguments should not be reused.
   */
  HFRL_STATUS_PANIC = 8,
} HfrlStatus;

/**
 * Session configuration.
 */
typedef struct HfrlConfig HfrlConfig;

/**
 * Append-only session log.
 */
typedef struct HfrlLog HfrlLog;

/**
 * A fitted reward ensemble together with the grid it was learned on.
 */
typedef struct HfrlModel HfrlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hfrl_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void hfrl_string_free(char *s);

/**
 * Tab-separated classification of every feedback type along the nine
 * design dimensions.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HfrlStatus hfrl_classification_table(char **out);

/**
 * # Safety
 * `out` must be a valid pointer.
 */
enum HfrlStatus hfrl_config_default(struct HfrlConfig **out);

/**
 * Parses and validates a TOML session configuration.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum HfrlStatus hfrl_config_from_toml(const char *toml, struct HfrlConfig **out);

/**
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_config_to_toml(const struct HfrlConfig *config, char **out);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum HfrlStatus hfrl_config_set_seed(struct HfrlConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum HfrlStatus hfrl_config_set_rounds(struct HfrlConfig *config, size_t rounds);

/**
 * # Safety
 * `config` must be null or a handle from this library, freed once.
 */
void hfrl_config_free(struct HfrlConfig *config);

/**
 * Runs a simulated session to completion.
 *
 * # Safety
 * `config` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_session_run(const struct HfrlConfig *config, struct HfrlLog **out);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum HfrlStatus hfrl_log_load(const char *path, struct HfrlLog **out);

/**
 * # Safety
 * `log` must be a live handle and `path` a nul-terminated string.
 */
enum HfrlStatus hfrl_log_save(const struct HfrlLog *log, const char *path);

/**
 * Number of records in the log.
 *
 * # Safety
 * `log` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_log_len(const struct HfrlLog *log, size_t *out);

/**
 * # Safety
 * `log` must be null or a handle from this library, freed once.
 */
void hfrl_log_free(struct HfrlLog *log);

/**
 * Audits a log by re-translating and refitting it, and returns the final
 * model. `fallback` may be null; it supplies the configuration when the log
 * carries none.
 *
 * # Safety
 * `log` must be a live handle, `fallback` null or a live handle, and `out`
 * a valid pointer.
 */
enum HfrlStatus hfrl_replay(const struct HfrlLog *log,
                            const struct HfrlConfig *fallback,
                            struct HfrlModel **out);

/**
 * Ensemble-mean learned reward for taking `action` (0 up, 1 down, 2 left,
 * 3 right) in cell `(x, y)`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_model_cell_reward(const struct HfrlModel *model,
                                       int32_t x,
                                       int32_t y,
                                       uint32_t action,
                                       double *out);

/**
 * Spearman correlation between learned and true rewards over all
 * state-actions.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_model_alignment(const struct HfrlModel *model, double *out);

/**
 * Number of fits the model has been through.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_model_version(const struct HfrlModel *model, uint64_t *out);

/**
 * The ensemble as a JSON checkpoint.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum HfrlStatus hfrl_model_to_json(const struct HfrlModel *model, char **out);

/**
 * # Safety
 * `model` must be null or a handle from this library, freed once.
 */
void hfrl_model_free(struct HfrlModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HFRL_H */
