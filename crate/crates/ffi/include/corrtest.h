#ifndef CORRTEST_H
#define CORRTEST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtWildWeight {
  CT_WILD_WEIGHT_RADEMACHER = 0,
  CT_WILD_WEIGHT_GAUSSIAN = 1,
} CtWildWeight;

typedef enum CtStatus {
  CT_STATUS_OK = 0,
  CT_STATUS_NULL_POINTER = 1,
  CT_STATUS_INVALID_ARGUMENT = 2,
  CT_STATUS_DIMENSION = 3,
  CT_STATUS_DEGENERATE_DATA = 4,
  CT_STATUS_DEGENERATE_HYPOTHESIS = 5,
  CT_STATUS_TRANSFORM_DOMAIN = 6,
  CT_STATUS_CONFIG = 7,
  CT_STATUS_NUMERICAL = 8,
  CT_STATUS_PANIC = 9,
} CtStatus;

typedef enum CtProcedure {
  CT_PROCEDURE_TAYLOR = 0,
  CT_PROCEDURE_EQUICOORDINATE = 1,
} CtProcedure;

typedef enum CtClassification {
  CT_CLASSIFICATION_NO_REJECTION = 0,
  CT_CLASSIFICATION_EQUAL_CORRELATION_DIFFERENT_VARIANCES = 1,
  CT_CLASSIFICATION_DIFFERENT_DEPENDENCE = 2,
} CtClassification;

/**
 * Groups of observations, one matrix per group.
 */
typedef struct CtDataset CtDataset;

/**
 * Linear hypothesis `C r = ζ` on the stacked correlations.
 */
typedef struct CtHypothesis CtHypothesis;

/**
 * Options of [`ct_test`]. Start from [`ct_options_default`].
 */
typedef struct CtOptions {
  double alpha;
  size_t mc_reps;
  size_t boot_reps;
  uint64_t seed;
  enum CtWildWeight wild_weight;
} CtOptions;

typedef struct CtTestResult {
  double statistic;
  double critical_value;
  double p_value;
  /**
   * 1 if the hypothesis is rejected.
   */
  int32_t reject;
  size_t reps;
} CtTestResult;

typedef struct CtCombinedResult {
  enum CtClassification classification;
  int32_t reject_any;
  /**
   * Number of coordinates: `d` variances followed by `d(d-1)/2` correlations.
   */
  size_t coordinates;
  size_t flagged_count;
  /**
   * NaN for the equicoordinate procedure.
   */
  double beta_tilde;
  /**
   * NaN for the Taylor procedure.
   */
  double equicoordinate_quantile;
} CtCombinedResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next `ct_*` call on the same thread.
 */
const char *ct_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ct_version(void);

struct CtOptions ct_options_default(void);

/**
 * Creates an empty dataset.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum CtStatus ct_dataset_new(struct CtDataset **out);

/**
 * Appends a group of `n` observations on `d` variables, stored row-major.
 *
 * # Safety
 * `ds` must come from [`ct_dataset_new`]; `values` must point to `n * d` doubles.
 */
enum CtStatus ct_dataset_add_group(struct CtDataset *ds, const double *values, size_t n, size_t d);

/**
 * # Safety
 * `ds` must come from [`ct_dataset_new`]; `out` must be writable.
 */
enum CtStatus ct_dataset_group_count(const struct CtDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must come from [`ct_dataset_new`] and not be used afterwards. NULL is ignored.
 */
void ct_dataset_free(struct CtDataset *ds);

/**
 * Equality of the correlation matrices of `a` groups with `d` variables.
 *
 * # Safety
 * `out` must be writable.
 */
enum CtStatus ct_hypothesis_equal_corr_matrices(size_t a, size_t d, struct CtHypothesis **out);

/**
 * Identity correlation matrix of one group.
 *
 * # Safety
 * `out` must be writable.
 */
enum CtStatus ct_hypothesis_identity(size_t d, struct CtHypothesis **out);

/**
 * All correlations of one group equal.
 *
 * # Safety
 * `out` must be writable.
 */
enum CtStatus ct_hypothesis_equal_correlations(size_t d, struct CtHypothesis **out);

/**
 * Correlation matrix of one group equal to the `d × d` matrix `r` (row-major).
 *
 * # Safety
 * `r` must point to `d * d` doubles; `out` must be writable.
 */
enum CtStatus ct_hypothesis_given(const double *r, size_t d, struct CtHypothesis **out);

/**
 * Custom hypothesis with an `m × a·d(d−1)/2` row-major matrix `c` and `zeta` of length `m`.
 * `zeta` may be NULL for a zero right-hand side.
 *
 * # Safety
 * `c` must point to `m * a * d(d−1)/2` doubles and `zeta`, if not NULL, to `m`; `out` must be writable.
 */
enum CtStatus ct_hypothesis_custom(const double *c,
                                   size_t m,
                                   const double *zeta,
                                   size_t a,
                                   size_t d,
                                   struct CtHypothesis **out);

/**
 * # Safety
 * `h` must come from a `ct_hypothesis_*` constructor and not be used afterwards. NULL is ignored.
 */
void ct_hypothesis_free(struct CtHypothesis *h);

/**
 * Runs one test. `method` is a name such as `"ats-par"` or `"ats-tay-m"`.
 * `opts` may be NULL for the defaults.
 *
 * # Safety
 * All pointers must be valid; `method` must be NUL-terminated.
 */
enum CtStatus ct_test(const struct CtDataset *ds,
                      const struct CtHypothesis *h,
                      const char *method,
                      const struct CtOptions *opts,
                      struct CtTestResult *out);

/**
 * Combined test on a dataset with exactly two groups.
 *
 * `flagged`, if not NULL, receives one byte per coordinate (1 = flagged) and
 * must hold `flagged_len ≥ d + d(d−1)/2` bytes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CtStatus ct_combined(const struct CtDataset *ds,
                          enum CtProcedure procedure,
                          double alpha,
                          size_t reps,
                          uint64_t seed,
                          int32_t two_sided,
                          uint8_t *flagged,
                          size_t flagged_len,
                          struct CtCombinedResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORRTEST_H */
