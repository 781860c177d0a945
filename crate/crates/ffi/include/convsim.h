#ifndef CONVSIM_H
#define CONVSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum ConvsimStatus {
  CONVSIM_STATUS_OK = 0,
  CONVSIM_STATUS_NULL_ARGUMENT = 1,
  CONVSIM_STATUS_INVALID_UTF8 = 2,
  CONVSIM_STATUS_IO_ERROR = 3,
  CONVSIM_STATUS_PARSE_ERROR = 4,
  CONVSIM_STATUS_INVALID_ARGUMENT = 5,
  CONVSIM_STATUS_UNDEFINED = 6,
  CONVSIM_STATUS_PANIC = 7,
} ConvsimStatus;

/*
 Why an answer failed validation; `None` when it passed.
 */
typedef enum ConvsimFailure {
  CONVSIM_FAILURE_NONE = 0,
  CONVSIM_FAILURE_NOT_A_SPAN = 1,
  CONVSIM_FAILURE_COPIED_FROM_BACKGROUND = 2,
  CONVSIM_FAILURE_TOO_LONG = 3,
} ConvsimFailure;

/*
 Opaque loaded dataset.
 */
typedef struct ConvsimDataset ConvsimDataset;

typedef struct ConvsimStats {
  uint64_t n_conversations;
  uint64_t n_questions;
  uint64_t n_answered;
  double avg_answer_length;
  double avg_answers_per_question;
} ConvsimStats;

/*
 Mean and population standard deviation over `n` conversations;
 `n_excluded` counts conversations where the value is undefined.
 */
typedef struct ConvsimSummary {
  double mean;
  double std;
  uint64_t n;
  uint64_t n_excluded;
} ConvsimSummary;

/*
 Borrowed UTF-8 strings describing one topic context.
 */
typedef struct ConvsimContext {
  const char *title;
  const char *background;
  const char *section_header;
  const char *section_text;
} ConvsimContext;

typedef struct ConvsimVerdict {
  bool valid;
  bool cannot_find;
  enum ConvsimFailure failure;
  uint64_t n_spans;
} ConvsimVerdict;

typedef struct ConvsimTokenScore {
  double precision;
  double recall;
  double f1;
  bool em;
} ConvsimTokenScore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer
 stays valid until the next call on this thread.
 */
const char *convsim_last_error(void);

/*
 Library version as a static string.
 */
const char *convsim_version(void);

/*
 Loads a dataset file (native, QuAC or JSONL) with char offsets.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ConvsimStatus convsim_dataset_load(const char *path, struct ConvsimDataset **out_handle);

/*
 Releases a dataset; null is ignored.

 # Safety
 `handle` must come from [`convsim_dataset_load`] and not be used again.
 */
void convsim_dataset_free(struct ConvsimDataset *handle);

/*
 # Safety
 `handle` must be a live dataset; `out` must be writable.
 */
enum ConvsimStatus convsim_dataset_stats(const struct ConvsimDataset *handle,
                                         struct ConvsimStats *out_stats);

/*
 Topic coverage summary over all conversations.

 # Safety
 `handle` must be a live dataset; `out` must be writable.
 */
enum ConvsimStatus convsim_dataset_coverage(const struct ConvsimDataset *handle,
                                            struct ConvsimSummary *out_summary);

/*
 Conversation-flow rank correlation summary.

 # Safety
 `handle` must be a live dataset; `out` must be writable.
 */
enum ConvsimStatus convsim_dataset_flow(const struct ConvsimDataset *handle,
                                        struct ConvsimSummary *out_summary);

/*
 Stats, coverage and flow as a JSON document. Release with
 [`convsim_string_free`].

 # Safety
 `handle` must be a live dataset; `out` must be writable.
 */
enum ConvsimStatus convsim_dataset_report_json(const struct ConvsimDataset *handle,
                                               char **out_json);

/*
 Releases a string returned by this library; null is ignored.

 # Safety
 `s` must come from this library and not be used again.
 */
void convsim_string_free(char *s);

/*
 Kendall tau-b between index order and `positions`.
 Returns `Undefined` for fewer than two positions or when all tie.

 # Safety
 `positions` must point to `n` values; `out` must be writable.
 */
enum ConvsimStatus convsim_krcc(const uint64_t *positions, size_t n, double *out_tau);

/*
 Validates a teacher output against a context with a given token cap.

 # Safety
 All strings must be NUL-terminated; `out` must be writable.
 */
enum ConvsimStatus convsim_validate_answer(const char *raw,
                                           const struct ConvsimContext *context,
                                           uint32_t max_answer_tokens,
                                           struct ConvsimVerdict *out_verdict);

/*
 Token-level score of a predicted against a gold answer text. Unanswerable
 markers on either side are scored as unanswerable.

 # Safety
 Both strings must be NUL-terminated; `out` must be writable.
 */
enum ConvsimStatus convsim_token_score(const char *predicted,
                                       const char *gold,
                                       struct ConvsimTokenScore *out_score);

/*
 Fleiss' kappa over a row-major `n_items` × `n_categories` count matrix.

 # Safety
 `counts` must point to `n_items * n_categories` values; `out` must be
 writable.
 */
enum ConvsimStatus convsim_fleiss_kappa(const uint32_t *counts,
                                        size_t n_items,
                                        size_t n_categories,
                                        double *out_kappa);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVSIM_H */
