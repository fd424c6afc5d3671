#ifndef MBR_PROBE_H
#define MBR_PROBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum MbrpStatus {
  MBRP_STATUS_OK = 0,
  MBRP_STATUS_NULL_POINTER = 1,
  MBRP_STATUS_INVALID_UTF8 = 2,
  MBRP_STATUS_INVALID_ARGUMENT = 3,
  MBRP_STATUS_IO = 4,
  MBRP_STATUS_PARSE = 5,
  MBRP_STATUS_SCORER = 6,
  MBRP_STATUS_PANIC = 7,
} MbrpStatus;

/**
 * A loaded corpus.
 */
typedef struct MbrpCorpus MbrpCorpus;

/**
 * A utility metric, in-process or backed by a scorer process.
 */
typedef struct MbrpUtility MbrpUtility;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful call. Valid until the next call on this thread.
 */
const char *mbrp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mbrp_version(void);

/**
 * Loads a JSON-lines corpus.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MbrpStatus mbrp_corpus_load(const char *path, struct MbrpCorpus **out);

/**
 * Number of segments, 0 for NULL.
 *
 * # Safety
 * `corpus` must be NULL or a live handle.
 */
size_t mbrp_corpus_len(const struct MbrpCorpus *corpus);

/**
 * # Safety
 * `corpus` must be NULL or a handle not yet freed.
 */
void mbrp_corpus_free(struct MbrpCorpus *corpus);

/**
 * Creates a utility from `"chrf++"`, `"bleu"` or `"remote:<command>"`.
 *
 * # Safety
 * `spec` must be a NUL-terminated string; `out` must be writable.
 */
enum MbrpStatus mbrp_utility_new(const char *spec, struct MbrpUtility **out);

/**
 * # Safety
 * `utility` must be NULL or a handle not yet freed.
 */
void mbrp_utility_free(struct MbrpUtility *utility);

/**
 * Scores one candidate against one support hypothesis.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum MbrpStatus mbrp_utility_score(const struct MbrpUtility *utility,
                                   const char *source,
                                   const char *candidate,
                                   const char *support,
                                   double *out);

/**
 * MBR decoding over `n` samples that serve as both candidates and support.
 * `chosen_index` receives the index into `samples` of the first occurrence
 * of the chosen hypothesis.
 *
 * # Safety
 * `samples` must point to `n` NUL-terminated strings; out-parameters must
 * be writable.
 */
enum MbrpStatus mbrp_mbr_decode_samples(const struct MbrpUtility *utility,
                                        const char *source,
                                        const char *const *samples,
                                        size_t n,
                                        size_t *chosen_index,
                                        double *mbr_score);

/**
 * MBR decoding of segment `index` of a corpus over its own samples.
 *
 * # Safety
 * Handles must be live; out-parameters must be writable. `*chosen_text`
 * must be released with [`mbrp_string_free`].
 */
enum MbrpStatus mbrp_corpus_decode(const struct MbrpCorpus *corpus,
                                   const struct MbrpUtility *utility,
                                   size_t index,
                                   char **chosen_text,
                                   double *mbr_score);

/**
 * Numbers in `text` as a JSON array of strings.
 *
 * # Safety
 * `text` must be NUL-terminated; `*out_json` must be released with
 * [`mbrp_string_free`].
 */
enum MbrpStatus mbrp_extract_numbers(const char *text, char **out_json);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void mbrp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MBR_PROBE_H */
