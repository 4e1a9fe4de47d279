#ifndef NLPCHECK_H
#define NLPCHECK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum NcStatus {
  NC_STATUS_OK = 0,
  // A required pointer argument was NULL.
  NC_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  NC_STATUS_INVALID_UTF8 = 2,
  // Malformed input: template, lexicon source, suite JSON, adapter spec, query.
  NC_STATUS_PARSE = 3,
  // A template slot names a lexicon that does not exist.
  NC_STATUS_MISSING_LEXICON = 4,
  // A value outside its domain (probability, tolerance).
  NC_STATUS_OUT_OF_RANGE = 5,
  // The model could not be reached or returned malformed output.
  NC_STATUS_MODEL = 6,
  // No test with that name, or no cases match the slice.
  NC_STATUS_NOT_FOUND = 7,
  // Failure rate of a test with no evaluated cases.
  NC_STATUS_EMPTY_TEST = 8,
  // Other failures (I/O, serialization).
  NC_STATUS_FAILED = 9,
  // A panic was caught at the boundary.
  NC_STATUS_INTERNAL = 10,
} NcStatus;

// Report format for [`nc_result_render`].
typedef enum NcFormat {
  NC_FORMAT_MARKDOWN = 0,
  NC_FORMAT_CSV = 1,
  NC_FORMAT_JSON = 2,
} NcFormat;

// Tagged lexicons used to fill template slots.
typedef struct NcLexicons NcLexicons;

// Outcome of a suite run.
typedef struct NcResult NcResult;

// A parsed, validated test suite.
typedef struct NcSuite NcSuite;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the calling thread's last failure, or NULL. Borrowed: valid
// until the thread's next call into this library; do not free.
const char *nc_last_error(void);

// Frees a string returned through a `char **` out-parameter. NULL is a no-op.
//
// # Safety
// `s` must come from this library and not have been freed.
void nc_string_free(char *s);

// Library version, static; do not free.
const char *nc_version(void);

// The bundled lexicons (adjectives, nouns, names, locations, ...).
//
// # Safety
// `out` must be a valid pointer.
enum NcStatus nc_lexicons_bundled(struct NcLexicons **out);

// Parses lexicons from source text (`[name]` headers, `text<TAB>k=v;k=v`).
//
// # Safety
// `src` must be a NUL-terminated string and `out` a valid pointer.
enum NcStatus nc_lexicons_parse(const char *src, struct NcLexicons **out);

// Adds every list of `extra` whose name `lexicons` lacks.
//
// # Safety
// Both handles must be live.
enum NcStatus nc_lexicons_merge_missing(struct NcLexicons *lexicons,
                                        const struct NcLexicons *extra);

// # Safety
// `lexicons` must be NULL or a live handle, not used afterwards.
void nc_lexicons_free(struct NcLexicons *lexicons);

// Expands a template group. `templates` holds `n_templates` strings
// expanded under one shared binding. `max_cases == 0` enumerates the full
// product; otherwise up to `max_cases` cases are sampled with `seed`.
// Writes a JSON array of `{"texts": [...], "binding": {...}}` to `out_json`.
//
// # Safety
// `lexicons` must be live; `templates` must point to `n_templates` strings.
enum NcStatus nc_expand(const struct NcLexicons *lexicons,
                        const char *const *templates,
                        size_t n_templates,
                        size_t max_cases,
                        uint64_t seed,
                        char **out_json);

// Three-way sentiment label for a positive-class probability:
// `negative` up to 1/3, `neutral` below 2/3, `positive` above.
// `*out_label` is static; do not free.
//
// # Safety
// `out_label` must be a valid pointer.
enum NcStatus nc_neutral_band(double prob_pos, const char **out_label);

// INV verdict for one original/perturbed pair: fails iff the label changed
// and the score moved by more than `tolerance`.
//
// # Safety
// Label pointers must be NUL-terminated strings; `out_pass` valid.
enum NcStatus nc_eval_inv(const char *orig_label,
                          double orig_score,
                          const char *pert_label,
                          double pert_score,
                          double tolerance,
                          bool *out_pass);

// Parses and validates a suite from JSON.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum NcStatus nc_suite_from_json(const char *json, struct NcSuite **out);

// Loads a suite file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum NcStatus nc_suite_load(const char *path, struct NcSuite **out);

// A bundled suite: `sentiment_mini`, `sentiment`, `qqp` or `mc`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum NcStatus nc_suite_bundled(const char *name, struct NcSuite **out);

// Number of tests in the suite.
//
// # Safety
// `suite` must be NULL or live.
size_t nc_suite_len(const struct NcSuite *suite);

// Runs every test of `suite` against the model named by `adapter`
// (`toy`, `toy-qqp`, `toy-mc`, `batch-file:DIR`, `subprocess:CMD`, or an
// http(s) URL). Predictions are cached in memory for the call only.
//
// # Safety
// Handles must be live; `adapter` a NUL-terminated string; `out` valid.
enum NcStatus nc_suite_run(const struct NcSuite *suite,
                           const struct NcLexicons *lexicons,
                           const char *adapter,
                           uint64_t seed,
                           struct NcResult **out);

// # Safety
// `suite` must be NULL or a live handle, not used afterwards.
void nc_suite_free(struct NcSuite *suite);

// Failure rate (percent) of one test. `query` may be NULL or empty for the
// whole test, or a binding tag query such as `P1.gender=male` to slice it.
// Returns `NC_STATUS_EMPTY_TEST` when no case was evaluated.
//
// # Safety
// `result` must be live; strings NUL-terminated; `out_percent` valid.
enum NcStatus nc_result_failure_rate(const struct NcResult *result,
                                     const char *test,
                                     const char *query,
                                     double *out_percent);

// Renders a report.
//
// # Safety
// `result` must be live and `out` valid. Free `*out` with [`nc_string_free`].
enum NcStatus nc_result_render(const struct NcResult *result, enum NcFormat format, char **out);

// Full result (every case, prediction and verdict) as JSON.
//
// # Safety
// `result` must be live and `out` valid. Free `*out` with [`nc_string_free`].
enum NcStatus nc_result_to_json(const struct NcResult *result, char **out);

// Reads a result written by [`nc_result_to_json`] or `nlpcheck run --out`.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum NcStatus nc_result_from_json(const char *json, struct NcResult **out);

// # Safety
// `result` must be NULL or a live handle, not used afterwards.
void nc_result_free(struct NcResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLPCHECK_H */
