#ifndef GENBIAS_H
#define GENBIAS_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Gender codes used across the ABI.
 */
#define GB_GENDER_NONE -1

#define GB_GENDER_MALE 0

#define GB_GENDER_FEMALE 1

/**
 * Category codes for agreement: male, female, low quality, others.
 */
#define GB_CATEGORY_MALE 0

#define GB_CATEGORY_FEMALE 1

#define GB_CATEGORY_LOW_QUALITY 2

#define GB_CATEGORY_OTHERS 3

typedef enum GbStatus {
  GB_STATUS_OK = 0,
  GB_STATUS_NULL_POINTER = 1,
  GB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The value is mathematically undefined for this input.
   */
  GB_STATUS_UNDEFINED = 3,
  GB_STATUS_INVALID_UTF8 = 4,
  GB_STATUS_INFERENCE = 5,
  GB_STATUS_PANIC = 6,
} GbStatus;

/**
 * Per-prompt gender counts for one model.
 */
typedef struct GbCounts GbCounts;

/**
 * Detectors backed by a scripted capability provider.
 */
typedef struct GbDetector GbDetector;

/**
 * Filter confusion: positive means the image passed the filter.
 */
typedef struct GbConfusion {
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_;
} GbConfusion;

/**
 * Fractions in `[0, 1]`; `NaN` where undefined.
 */
typedef struct GbFilterMetrics {
  double precision;
  double recall;
  double f1;
  double filter_rate;
} GbFilterMetrics;

/**
 * One detector decision.
 */
typedef struct GbVerdict {
  bool classified;
  /**
   * `GB_GENDER_*`.
   */
  int32_t gender;
  /**
   * `NaN` when filtered.
   */
  double confidence;
  /**
   * Filter reason code, `-1` when classified: no_face 0, no_person 1,
   * multiple_people 2, low_confidence 3, uncertain 4,
   * unparseable_answer 5, provider_error 6.
   */
  int32_t reason;
} GbVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Free with
 * [`gb_string_free`].
 */
char *gb_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void gb_string_free(char *s);

/**
 * Bias score of one prompt. `Undefined` when there are no clear images.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GbStatus gb_prompt_bias_score(uint64_t n_male, uint64_t n_female, double *out_score);

/**
 * # Safety
 * `out_handle` must be valid for writes.
 */
enum GbStatus gb_counts_new(struct GbCounts **out_handle);

/**
 * # Safety
 * `handle` must be null or from [`gb_counts_new`], freed at most once.
 */
void gb_counts_free(struct GbCounts *handle);

/**
 * Appends one prompt's tallies.
 *
 * # Safety
 * `handle` must be a live counts handle.
 */
enum GbStatus gb_counts_push(struct GbCounts *handle,
                             uint64_t n_male,
                             uint64_t n_female,
                             uint64_t n_low_quality);

/**
 * # Safety
 * `handle` must be a live counts handle; `out_len` valid for writes.
 */
enum GbStatus gb_counts_len(const struct GbCounts *handle, size_t *out_len);

/**
 * Mean absolute prompt score over prompts with clear images.
 * `out_excluded` receives the number of prompts without any.
 *
 * # Safety
 * `handle` must be a live counts handle; outputs valid for writes.
 */
enum GbStatus gb_counts_model_bias(const struct GbCounts *handle,
                                   double *out_score,
                                   size_t *out_excluded);

/**
 * `(detector - actual) / actual * 100`.
 *
 * # Safety
 * `out_pct` must be valid for writes.
 */
enum GbStatus gb_pct_difference(double detector_mbs, double actual_mbs, double *out_pct);

/**
 * # Safety
 * `out_metrics` must be valid for writes.
 */
enum GbStatus gb_filter_metrics(struct GbConfusion confusion, struct GbFilterMetrics *out_metrics);

/**
 * Cohen's kappa between two aligned label arrays of `GB_CATEGORY_*` codes.
 * `Undefined` when chance agreement is total.
 *
 * # Safety
 * `a` and `b` must each hold `len` codes; `out_kappa` valid for writes.
 */
enum GbStatus gb_kappa(const uint8_t *a, const uint8_t *b, size_t len, double *out_kappa);

/**
 * Prompt text for `word` in `category` (e.g. "profession").
 *
 * # Safety
 * String arguments must be nul-terminated; `out_text` valid for writes.
 */
enum GbStatus gb_render_prompt(const char *category, const char *word, char **out_text);

/**
 * Builds a detector handle from a stub script (JSON keyed by image id).
 *
 * # Safety
 * `script_json` must be nul-terminated; `out_handle` valid for writes.
 */
enum GbStatus gb_detector_new_stub(const char *script_json, struct GbDetector **out_handle);

/**
 * # Safety
 * `handle` must be null or from [`gb_detector_new_stub`], freed at most once.
 */
void gb_detector_free(struct GbDetector *handle);

/**
 * Runs `detector` (e.g. "clip-enhance") on a PNG image.
 *
 * # Safety
 * Strings must be nul-terminated, `png` must hold `png_len` bytes and
 * `out_verdict` must be valid for writes.
 */
enum GbStatus gb_detect(const struct GbDetector *handle,
                        const char *detector,
                        const char *image_id,
                        const uint8_t *png,
                        size_t png_len,
                        struct GbVerdict *out_verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENBIAS_H */
