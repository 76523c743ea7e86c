#ifndef AVSCAN_H
#define AVSCAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AvsMode {
  AVS_MODE_WHITELIST = 0,
  AVS_MODE_STRICT = 1,
  AVS_MODE_LITERAL = 2,
} AvsMode;

typedef enum AvsStatus {
  AVS_STATUS_OK = 0,
  AVS_STATUS_NULL_ARGUMENT = 1,
  AVS_STATUS_INVALID_UTF8 = 2,
  AVS_STATUS_INVALID_INPUT = 3,
  AVS_STATUS_OUT_OF_RANGE = 4,
  AVS_STATUS_PANIC = 5,
} AvsStatus;

typedef enum AvsVerdict {
  AVS_VERDICT_CLEAN = 0,
  AVS_VERDICT_VULNERABLE = 1,
  AVS_VERDICT_ERROR = 2,
  AVS_VERDICT_TIMEOUT = 3,
} AvsVerdict;

/**
 * Analysis settings.
 */
typedef struct AvsOptions AvsOptions;

/**
 * A finished analysis.
 */
typedef struct AvsReport AvsReport;

/**
 * One finding, copied out of a report.
 */
typedef struct AvsFinding {
  /**
   * False when the contract has no dispatcher.
   */
  bool has_selector;
  uint32_t selector;
  uint32_t param_index;
  /**
   * Byte offset of the parameter in calldata.
   */
  uint32_t param_offset;
  uint64_t call_pc;
  uint64_t effect_pc;
  /**
   * The state change is a zero-value call rather than a store.
   */
  bool via_plain_call;
} AvsFinding;

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next avs_* call on the same thread.
 */
const char *avs_last_error(void);

/**
 * Library version as a static string.
 */
const char *avs_version(void);

/**
 * Default options: 600 s timeout, 512 paths per function, whitelist mode.
 */
struct AvsOptions *avs_options_new(void);

/**
 * # Safety
 * `opts` must come from [`avs_options_new`] and not be freed yet, or be null.
 */
void avs_options_free(struct AvsOptions *opts);

/**
 * # Safety
 * `opts` must be a live options handle.
 */
enum AvsStatus avs_options_set_timeout_ms(struct AvsOptions *opts, uint64_t ms);

/**
 * # Safety
 * `opts` must be a live options handle.
 */
enum AvsStatus avs_options_set_max_paths(struct AvsOptions *opts, size_t max_paths);

/**
 * # Safety
 * `opts` must be a live options handle.
 */
enum AvsStatus avs_options_set_mode(struct AvsOptions *opts, enum AvsMode mode);

/**
 * Analyses raw creation or runtime bytecode. `opts` may be null for defaults.
 *
 * # Safety
 * `code` must point to `len` readable bytes and `out` must be writable.
 */
enum AvsStatus avs_analyze_bytes(const uint8_t *code,
                                 size_t len,
                                 const struct AvsOptions *opts,
                                 struct AvsReport **out);

/**
 * Analyses a hex string, with or without a `0x` prefix.
 *
 * # Safety
 * `hex` must be a NUL-terminated string and `out` must be writable.
 */
enum AvsStatus avs_analyze_hex(const char *hex,
                               const struct AvsOptions *opts,
                               struct AvsReport **out);

/**
 * # Safety
 * `report` must come from an analyze call and not be freed yet, or be null.
 */
void avs_report_free(struct AvsReport *report);

/**
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum AvsStatus avs_report_verdict(const struct AvsReport *report, enum AvsVerdict *out);

/**
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum AvsStatus avs_report_finding_count(const struct AvsReport *report, size_t *out);

/**
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum AvsStatus avs_report_finding(const struct AvsReport *report,
                                  size_t index,
                                  struct AvsFinding *out);

/**
 * The full report as pretty-printed JSON. Free the string with
 * [`avs_string_free`].
 *
 * # Safety
 * `report` must be a live report handle and `out` writable.
 */
enum AvsStatus avs_report_json(const struct AvsReport *report, char **out);

/**
 * # Safety
 * `s` must come from this library and not be freed yet, or be null.
 */
void avs_string_free(char *s);

#endif  /* AVSCAN_H */
