#ifndef ANNOTATOR_H
#define ANNOTATOR_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define ANN_PURPOSE_REVIEW 0

#define ANN_PURPOSE_SELECTION 1

typedef enum AnnRoute {
  ANN_ROUTE_DIRECT = 0,
  ANN_ROUTE_REVIEW = 1,
} AnnRoute;

typedef enum AnnRouteReason {
  ANN_ROUTE_REASON_CONSENSUS = 0,
  ANN_ROUTE_REASON_DISAGREEMENT = 1,
  ANN_ROUTE_REASON_TIE = 2,
  ANN_ROUTE_REASON_BACKEND_FAILURE = 3,
} AnnRouteReason;

typedef enum AnnStatus {
  ANN_STATUS_OK = 0,
  ANN_STATUS_NULL_ARGUMENT = 1,
  ANN_STATUS_INVALID_UTF8 = 2,
  ANN_STATUS_INVALID_INPUT = 3,
  ANN_STATUS_CONFIG = 4,
  ANN_STATUS_CHECKSUM = 5,
  ANN_STATUS_SELECTION = 6,
  ANN_STATUS_BACKEND = 7,
  ANN_STATUS_REVIEW = 8,
  ANN_STATUS_RUN_PAUSED = 9,
  ANN_STATUS_ILLEGAL_STATE = 10,
  ANN_STATUS_IO = 11,
  ANN_STATUS_PANIC = 12,
} AnnStatus;

/**
 * Token and call counters with a price table.
 */
typedef struct AnnLedger AnnLedger;

/**
 * A run bound to a run directory.
 */
typedef struct AnnRun AnnRun;

/**
 * Closed label set of a task.
 */
typedef struct AnnSchema AnnSchema;

/**
 * Result of voting on one sample.
 */
typedef struct AnnVoteResult {
  /**
   * Winning label index, or -1 on a tie or when every backend failed.
   */
  int64_t winner;
  size_t winner_count;
  double uncertainty;
  enum AnnRoute route;
  enum AnnRouteReason reason;
} AnnVoteResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *ann_last_error(void);

/**
 * Library version, a static string.
 */
const char *ann_version(void);

/**
 * # Safety
 * `s` is NULL or a string returned through a `char **out` argument of this
 * library that has not been freed yet.
 */
void ann_string_free(char *s);

/**
 * Builds a schema from `n_labels` label strings. Labels are canonicalized
 * (trimmed, lowercased) and must be unique.
 *
 * # Safety
 * `task` is a NUL-terminated string, `labels` points to `n_labels` of them,
 * `out` is writable.
 */
enum AnnStatus ann_schema_new(const char *task,
                              const char *const *labels,
                              size_t n_labels,
                              struct AnnSchema **out);

/**
 * Built-in schema for `sentiment` or `toxicity`.
 *
 * # Safety
 * `task` is a NUL-terminated string and `out` is writable.
 */
enum AnnStatus ann_schema_preset(const char *task, struct AnnSchema **out);

/**
 * # Safety
 * `schema` is NULL or a live handle from this library.
 */
void ann_schema_free(struct AnnSchema *schema);

/**
 * Number of labels, 0 for NULL.
 *
 * # Safety
 * `schema` is NULL or a live handle.
 */
size_t ann_schema_len(const struct AnnSchema *schema);

/**
 * Label name at `index`, borrowed from the schema; NULL when out of range.
 *
 * # Safety
 * `schema` is NULL or a live handle.
 */
const char *ann_schema_label(const struct AnnSchema *schema, size_t index);

/**
 * Index of `label` after canonicalization.
 *
 * # Safety
 * `schema` is a live handle, `label` a NUL-terminated string, `out` writable.
 */
enum AnnStatus ann_schema_index_of(const struct AnnSchema *schema, const char *label, size_t *out);

/**
 * `1 - max_multiplicity / k` over `k` label indices.
 *
 * # Safety
 * `labels` points to `k` values and `out` is writable.
 */
enum AnnStatus ann_uncertainty(const size_t *labels, size_t k, double *out);

/**
 * Votes on one sample. `labels` holds one entry per backend; a negative
 * entry marks a backend that failed to answer.
 *
 * # Safety
 * `schema` is a live handle, `labels` points to `k` values, `out` writable.
 */
enum AnnStatus ann_vote(const struct AnnSchema *schema,
                        const int64_t *labels,
                        size_t k,
                        double epsilon,
                        struct AnnVoteResult *out);

/**
 * Cost of labeling `n_samples` with the LLM alone, as a USD string with two
 * decimals. Prices are micro-dollars per 1M tokens.
 *
 * # Safety
 * `out` is writable; free the result with `ann_string_free`.
 */
enum AnnStatus ann_estimate_cost(int64_t n_samples,
                                 int64_t in_tokens_per_sample,
                                 int64_t out_tokens_per_sample,
                                 uint64_t input_per_1m_micros,
                                 uint64_t output_per_1m_micros,
                                 char **out);

/**
 * # Safety
 * `out` is writable.
 */
enum AnnStatus ann_ledger_new(struct AnnLedger **out);

/**
 * # Safety
 * `ledger` is NULL or a live handle.
 */
void ann_ledger_free(struct AnnLedger *ledger);

/**
 * Sets a provider's price in micro-dollars per 1M tokens.
 *
 * # Safety
 * `ledger` is a live handle and `provider` a NUL-terminated string.
 */
enum AnnStatus ann_ledger_set_price(struct AnnLedger *ledger,
                                    const char *provider,
                                    uint64_t input_per_1m_micros,
                                    uint64_t output_per_1m_micros);

/**
 * Records one LLM call. `purpose` is `ANN_PURPOSE_REVIEW` or
 * `ANN_PURPOSE_SELECTION`.
 *
 * # Safety
 * `ledger` is a live handle and `provider` a NUL-terminated string.
 */
enum AnnStatus ann_ledger_record(struct AnnLedger *ledger,
                                 const char *provider,
                                 uint32_t purpose,
                                 uint64_t input_tokens,
                                 uint64_t output_tokens);

/**
 * Calls recorded for `purpose`.
 *
 * # Safety
 * `ledger` is a live handle and `out` writable.
 */
enum AnnStatus ann_ledger_calls(const struct AnnLedger *ledger, uint32_t purpose, uint64_t *out);

/**
 * Total priced cost as a USD string with six decimals.
 *
 * # Safety
 * `ledger` is a live handle and `out` writable.
 */
enum AnnStatus ann_ledger_total_cost(const struct AnnLedger *ledger, char **out);

/**
 * Per-provider usage and cost as JSON.
 *
 * # Safety
 * `ledger` is a live handle and `out` writable.
 */
enum AnnStatus ann_ledger_summary_json(const struct AnnLedger *ledger, char **out);

/**
 * Opens a run: loads the config file, ingests the dataset and prepares
 * `out_dir`. With `resume` set the run checkpointed in `out_dir` continues.
 *
 * # Safety
 * Paths are NUL-terminated strings and `out` is writable.
 */
enum AnnStatus ann_run_open(const char *config_path,
                            const char *input_path,
                            const char *out_dir,
                            bool resume,
                            struct AnnRun **out);

/**
 * # Safety
 * `run` is NULL or a live handle.
 */
void ann_run_free(struct AnnRun *run);

/**
 * Starts the status and review HTTP service for the run on `addr`
 * (`host:port`, port 0 picks one) and returns its base URL. Human review
 * modes need it before `ann_run_advance`.
 *
 * # Safety
 * `run` is a live handle, `addr` a NUL-terminated string, `url_out` NULL or
 * writable.
 */
enum AnnStatus ann_run_serve(struct AnnRun *run, const char *addr, char **url_out);

/**
 * Processes up to `max_samples` more samples, or the rest of the dataset
 * when `max_samples` is 0. `ANN_STATUS_RUN_PAUSED` leaves a resumable
 * checkpoint behind.
 *
 * # Safety
 * `run` is a live handle not used concurrently from another thread.
 */
enum AnnStatus ann_run_advance(struct AnnRun *run, size_t max_samples);

/**
 * Samples processed so far, 0 for NULL.
 *
 * # Safety
 * `run` is NULL or a live handle.
 */
size_t ann_run_cursor(const struct AnnRun *run);

/**
 * Dataset size, 0 for NULL.
 *
 * # Safety
 * `run` is NULL or a live handle.
 */
size_t ann_run_total(const struct AnnRun *run);

/**
 * The run report as JSON, rebuilt from the output file.
 *
 * # Safety
 * `run` is a live handle and `out` writable.
 */
enum AnnStatus ann_run_report_json(const struct AnnRun *run, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANNOTATOR_H */
