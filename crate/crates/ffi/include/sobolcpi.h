#ifndef SOBOLCPI_H
#define SOBOLCPI_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SobolcpiStatus {
  SOBOLCPI_STATUS_OK = 0,
  SOBOLCPI_STATUS_INVALID_PARAMETER = 1,
  SOBOLCPI_STATUS_NUMERICAL = 2,
  SOBOLCPI_STATUS_NULL_POINTER = 3,
  SOBOLCPI_STATUS_IO = 4,
  SOBOLCPI_STATUS_PANIC = 5,
} SobolcpiStatus;

/**
 * Loss used to compare predictions with the response.
 */
typedef enum SobolcpiLoss {
  SOBOLCPI_LOSS_QUADRATIC = 0,
  SOBOLCPI_LOSS_ZERO_ONE = 1,
} SobolcpiLoss;

/**
 * Additive threshold correction `c * n^-gamma`.
 */
typedef enum SobolcpiCorrection {
  SOBOLCPI_CORRECTION_NONE = 0,
  SOBOLCPI_CORRECTION_SQRT = 1,
  SOBOLCPI_CORRECTION_LINEAR = 2,
  SOBOLCPI_CORRECTION_QUADRATIC = 3,
} SobolcpiCorrection;

/**
 * Response vector and design matrix.
 */
typedef struct SobolcpiDataset SobolcpiDataset;

/**
 * Trained predictor.
 */
typedef struct SobolcpiModel SobolcpiModel;

/**
 * Fitted conditional sampler for one feature.
 */
typedef struct SobolcpiSampler SobolcpiSampler;

/**
 * Importance estimate with its per-sample summands.
 */
typedef struct SobolcpiScore SobolcpiScore;

/**
 * Outcome of a one-sided conditional-null test.
 */
typedef struct SobolcpiTestResult {
  double statistic;
  double se;
  double threshold;
  double p_value;
  /**
   * Resolved correction scale.
   */
  double c;
  bool reject;
  bool variance_clipped;
} SobolcpiTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sobolcpi_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sobolcpi_version(void);

/**
 * Builds a dataset from a row-major `n x p` matrix and a response of length `n`.
 *
 * # Safety
 * `x` must point to `n * p` doubles, `y` to `n` doubles, `out` to writable storage.
 */
enum SobolcpiStatus sobolcpi_dataset_new(const double *x,
                                         size_t n,
                                         size_t p,
                                         const double *y,
                                         struct SobolcpiDataset **out_dataset);

/**
 * Reads a headered CSV whose last column is the response.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SobolcpiStatus sobolcpi_dataset_read_csv(const char *path,
                                              struct SobolcpiDataset **out_dataset);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t sobolcpi_dataset_n(const struct SobolcpiDataset *dataset);

/**
 * Number of features, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t sobolcpi_dataset_p(const struct SobolcpiDataset *dataset);

/**
 * Random train/test split with the given train fraction.
 *
 * # Safety
 * `dataset` must be a live handle and both outputs writable.
 */
enum SobolcpiStatus sobolcpi_dataset_split(const struct SobolcpiDataset *dataset,
                                           double train_fraction,
                                           uint64_t seed,
                                           struct SobolcpiDataset **out_train,
                                           struct SobolcpiDataset **out_test);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void sobolcpi_dataset_free(struct SobolcpiDataset *dataset);

/**
 * Fits a learner described by JSON, e.g. `{"kind":"ols"}` or
 * `{"kind":"ridge","lambda":0.5}`.
 *
 * # Safety
 * `spec_json` must be NUL-terminated, `dataset` live, `out` writable.
 */
enum SobolcpiStatus sobolcpi_model_fit(const char *spec_json,
                                       const struct SobolcpiDataset *dataset,
                                       uint64_t seed,
                                       struct SobolcpiModel **out_model);

/**
 * Predicts the `n` rows of a row-major `n x p` matrix into `out_pred`.
 *
 * # Safety
 * `x` must hold `n * p` doubles and `out_pred` room for `n`.
 */
enum SobolcpiStatus sobolcpi_model_predict(const struct SobolcpiModel *model,
                                           const double *x,
                                           size_t n,
                                           size_t p,
                                           double *out_pred);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sobolcpi_model_free(struct SobolcpiModel *model);

/**
 * Fits the residual-permutation sampler of feature `j` on the design of `dataset`.
 *
 * # Safety
 * `spec_json` must be NUL-terminated, `dataset` live, `out` writable.
 */
enum SobolcpiStatus sobolcpi_sampler_fit(const struct SobolcpiDataset *dataset,
                                         size_t j,
                                         const char *spec_json,
                                         uint64_t seed,
                                         struct SobolcpiSampler **out_sampler);

/**
 * # Safety
 * `sampler` must be null or a handle not yet freed.
 */
void sobolcpi_sampler_free(struct SobolcpiSampler *sampler);

/**
 * Sobol-CPI with `n_cal` conditional draws per test row.
 *
 * # Safety
 * All handles must be live and `out_score` writable.
 */
enum SobolcpiStatus sobolcpi_sobol_cpi(const struct SobolcpiModel *model,
                                       const struct SobolcpiSampler *sampler,
                                       const struct SobolcpiDataset *test,
                                       size_t n_cal,
                                       enum SobolcpiLoss loss,
                                       uint64_t seed,
                                       struct SobolcpiScore **out_score);

/**
 * Conditional permutation importance from one conditional draw.
 *
 * # Safety
 * All handles must be live and `out_score` writable.
 */
enum SobolcpiStatus sobolcpi_cpi(const struct SobolcpiModel *model,
                                 const struct SobolcpiSampler *sampler,
                                 const struct SobolcpiDataset *test,
                                 enum SobolcpiLoss loss,
                                 uint64_t seed,
                                 struct SobolcpiScore **out_score);

/**
 * Marginal permutation importance of feature `j`.
 *
 * # Safety
 * All handles must be live and `out_score` writable.
 */
enum SobolcpiStatus sobolcpi_pfi(const struct SobolcpiModel *model,
                                 const struct SobolcpiDataset *test,
                                 size_t j,
                                 enum SobolcpiLoss loss,
                                 uint64_t seed,
                                 struct SobolcpiScore **out_score);

/**
 * Leave-one-covariate-out importance; the restricted learner is given as JSON.
 *
 * # Safety
 * All handles must be live, `spec_json` NUL-terminated, `out_score` writable.
 */
enum SobolcpiStatus sobolcpi_loco(const struct SobolcpiModel *model,
                                  const char *spec_json,
                                  const struct SobolcpiDataset *train,
                                  const struct SobolcpiDataset *test,
                                  size_t j,
                                  enum SobolcpiLoss loss,
                                  uint64_t seed,
                                  struct SobolcpiScore **out_score);

/**
 * Point estimate of a score, or NaN for a null handle.
 *
 * # Safety
 * `score` must be null or a live handle.
 */
double sobolcpi_score_estimate(const struct SobolcpiScore *score);

/**
 * Copies the per-row loss differences into `out_diffs` (room for `len`) and
 * stores their count in `out_len`. Split-sample scores have none.
 *
 * # Safety
 * `score` must be live; `out_diffs` must hold `len` doubles or be null.
 */
enum SobolcpiStatus sobolcpi_score_diffs(const struct SobolcpiScore *score,
                                         double *out_diffs,
                                         size_t len,
                                         size_t *out_len);

/**
 * # Safety
 * `score` must be null or a handle not yet freed.
 */
void sobolcpi_score_free(struct SobolcpiScore *score);

/**
 * One-sided test of the conditional null for a score. `bootstrap_reps = 0`
 * selects the sample variance; a negative `c` selects the response sd.
 *
 * # Safety
 * `score` must be live and `out_result` writable.
 */
enum SobolcpiStatus sobolcpi_test(const struct SobolcpiScore *score,
                                  enum SobolcpiCorrection correction,
                                  double c,
                                  size_t bootstrap_reps,
                                  double alpha,
                                  size_t n,
                                  uint64_t seed,
                                  struct SobolcpiTestResult *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOBOLCPI_H */
