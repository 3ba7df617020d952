#ifndef PRZCDP_H
#define PRZCDP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PrzStatus {
  PRZ_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PRZ_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  PRZ_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad input: schema, thresholds, parameters or configuration.
   */
  PRZ_STATUS_VALIDATION = 3,
  /**
   * I/O or another failure while running.
   */
  PRZ_STATUS_RUNTIME = 4,
  /**
   * A row index was out of range.
   */
  PRZ_STATUS_OUT_OF_RANGE = 5,
  /**
   * Internal panic; the library state is otherwise intact.
   */
  PRZ_STATUS_PANIC = 6,
} PrzStatus;

typedef struct PrzPolicy PrzPolicy;

typedef struct PrzSplitTable PrzSplitTable;

typedef struct PrzTable PrzTable;

typedef struct PrzThresholds PrzThresholds;

/**
 * Library version as a static NUL-terminated string.
 */
const char *prz_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Owned by the
 * library.
 */
const char *prz_last_error(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library.
 */
void prz_string_free(char *s);

/**
 * Loads a CSV with a `ROW_ID` column. `schema` is
 * `name:conditional,name:measure,...`.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum PrzStatus prz_table_load_csv(const char *path, const char *schema, struct PrzTable **out);

/**
 * Parses CSV text held in memory.
 *
 * # Safety
 * As [`prz_table_load_csv`].
 */
enum PrzStatus prz_table_from_csv(const char *text, const char *schema, struct PrzTable **out);

/**
 * # Safety
 * `table` must be a live handle; `out` must be writable.
 */
enum PrzStatus prz_table_len(const struct PrzTable *table, size_t *out);

/**
 * # Safety
 * `table` must be NULL or a handle not yet freed.
 */
void prz_table_free(struct PrzTable *table);

/**
 * Thresholds as JSON: `{"uniform": {"attr": T, ...}}` or
 * `{"grouped": {"key": ..., "groups": {...}, "default": {...}}}`.
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum PrzStatus prz_thresholds_from_json(const char *json, struct PrzThresholds **out);

/**
 * # Safety
 * `thresholds` must be NULL or a handle not yet freed.
 */
void prz_thresholds_free(struct PrzThresholds *thresholds);

/**
 * Unit-splits `table`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PrzStatus prz_split(const struct PrzTable *table,
                         const struct PrzThresholds *thresholds,
                         struct PrzSplitTable **out);

/**
 * Number of sub-records for row `row` (0-based) of `table`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PrzStatus prz_split_count(const struct PrzTable *table,
                               const struct PrzThresholds *thresholds,
                               size_t row,
                               size_t *out);

/**
 * # Safety
 * `split` must be a live handle; `out` must be writable.
 */
enum PrzStatus prz_split_len(const struct PrzSplitTable *split, size_t *out);

/**
 * Split table as CSV with an `ORIGIN_ROW_ID` column.
 *
 * # Safety
 * `split` must be a live handle; `out` must be writable. Free the result
 * with [`prz_string_free`].
 */
enum PrzStatus prz_split_to_csv(const struct PrzSplitTable *split, char **out);

/**
 * # Safety
 * `split` must be NULL or a handle not yet freed.
 */
void prz_split_free(struct PrzSplitTable *split);

/**
 * Policy `rho * m(r)^2` for splits under `thresholds`.
 *
 * # Safety
 * `thresholds` must be live; `out` must be writable.
 */
enum PrzStatus prz_policy_split_cost(double rho,
                                     const struct PrzThresholds *thresholds,
                                     struct PrzPolicy **out);

/**
 * Parses a published policy (for example a run's `policy.json`).
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum PrzStatus prz_policy_from_json(const char *json, struct PrzPolicy **out);

/**
 * # Safety
 * `policy` must be live; `out` must be writable. Free the result with
 * [`prz_string_free`].
 */
enum PrzStatus prz_policy_to_json(const struct PrzPolicy *policy, char **out);

/**
 * Policy loss of row `row` (0-based) of `table`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum PrzStatus prz_policy_evaluate(const struct PrzPolicy *policy,
                                   const struct PrzTable *table,
                                   size_t row,
                                   double *out);

/**
 * Smallest loss the policy assigns to any record.
 *
 * # Safety
 * `policy` must be live; `out` must be writable.
 */
enum PrzStatus prz_policy_min(const struct PrzPolicy *policy, double *out);

/**
 * # Safety
 * `policy` must be NULL or a handle not yet freed.
 */
void prz_policy_free(struct PrzPolicy *policy);

/**
 * Gaussian scale for a `rho`-zCDP release with sensitivity `delta`.
 *
 * # Safety
 * `out` must be writable.
 */
enum PrzStatus prz_sigma_for_rho(double delta, double rho, double *out);

/**
 * `J * sum P` over the `len` losses of a group.
 *
 * # Safety
 * `losses` must point to `len` doubles; `out` must be writable.
 */
enum PrzStatus prz_simple_group_bound(const double *losses, size_t len, double *out);

/**
 * Chained group bound minimized over `k`.
 *
 * # Safety
 * As [`prz_simple_group_bound`].
 */
enum PrzStatus prz_advanced_group_bound(const double *losses, size_t len, double *out);

/**
 * Runs a CLI subcommand (`split`, `run`, `baseline`, `sweep`, `mse-theory`,
 * `ffu`, `metrics`) on a config file, writing into `out_dir`. `seed` is
 * used only when `has_seed` is non-zero.
 *
 * # Safety
 * String arguments must be NUL-terminated.
 */
enum PrzStatus prz_run_config(const char *command,
                              const char *config_path,
                              const char *out_dir,
                              int32_t has_seed,
                              uint64_t seed,
                              int32_t no_noise);

#endif  /* PRZCDP_H */
