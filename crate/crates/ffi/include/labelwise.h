#ifndef LABELWISE_H
#define LABELWISE_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_VALIDATION = 1,
  LW_STATUS_NUMERICAL = 2,
  LW_STATUS_FIT = 3,
  LW_STATUS_PARSE = 4,
  LW_STATUS_REFUSED = 5,
  LW_STATUS_IO = 6,
  LW_STATUS_NULL_POINTER = 7,
  LW_STATUS_PANIC = 8,
} LwStatus;

typedef enum LwMeasure {
  LW_MEASURE_TRACE = 0,
  LW_MEASURE_DET_ROOT = 1,
  LW_MEASURE_MAX_EIGENVALUE = 2,
} LwMeasure;

/*
 Planner model for one series length and frame rate.
 */
typedef struct LwPlanner LwPlanner;

/*
 Pruned frequency prior.
 */
typedef struct LwPrior LwPrior;

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *lw_last_error(void);

/*
 Toolkit version as a static NUL-terminated string.
 */
const char *lw_version(void);

/*
 Fits and prunes a prior on `n × slices` column-major `values` sampled at
 `frame_rate`, over the grid `f_m = m · spacing`, `m <= m_max`, with the
 default EM settings.

 # Safety
 `values` must point to `n * slices` doubles and `out` to writable storage
 for one handle.
 */
enum LwStatus lw_prior_fit(const double *values,
                           size_t n,
                           size_t slices,
                           double frame_rate,
                           size_t m_max,
                           double spacing,
                           double prune_ratio,
                           struct LwPrior **out);

/*
 Loads a prior artifact written by `labelwise fit-prior`.

 # Safety
 `path` must be a NUL-terminated string and `out` writable.
 */
enum LwStatus lw_prior_load(const char *path, struct LwPrior **out);

/*
 Number of kept frequencies including DC, or 0 for a null handle.

 # Safety
 `prior` must be null or a live handle.
 */
size_t lw_prior_kept_count(const struct LwPrior *prior);

/*
 Copies the kept frequencies and their variances (each `capacity` long at
 most) and the noise variance.

 # Safety
 `frequencies` and `alpha` must hold `capacity` doubles; `sigma2` may be null.
 */
enum LwStatus lw_prior_values(const struct LwPrior *prior,
                              double *frequencies,
                              double *alpha,
                              size_t capacity,
                              double *sigma2);

/*
 # Safety
 `prior` must be null or a handle not yet freed.
 */
void lw_prior_free(struct LwPrior *prior);

/*
 Planner on `n` frames at `frame_rate`; zero values select the series the
 prior was fitted on.

 # Safety
 `prior` must be a live handle and `out` writable.
 */
enum LwStatus lw_planner_new(const struct LwPrior *prior,
                             size_t n,
                             double frame_rate,
                             struct LwPlanner **out);

/*
 Series length of a planner, or 0 for a null handle.

 # Safety
 `planner` must be null or a live handle.
 */
size_t lw_planner_len(const struct LwPlanner *planner);

/*
 Greedy labeling order of length `k`. Writes `k` indices and, when
 `spreads` is non-null, the spread after each step.

 # Safety
 `indices` must hold `k` entries; `spreads` must be null or hold `k`.
 */
enum LwStatus lw_planner_greedy(const struct LwPlanner *planner,
                                size_t k,
                                enum LwMeasure measure,
                                bool maximize,
                                size_t *indices,
                                double *spreads);

/*
 Posterior mean and predictive standard deviation over the series after
 labeling `count` frames. `mean` and `std` must hold `lw_planner_len`
 entries.

 # Safety
 `indices` and `values` must hold `count` entries; `mean` and `std` must
 hold the series length.
 */
enum LwStatus lw_planner_predict(const struct LwPlanner *planner,
                                 const size_t *indices,
                                 const double *values,
                                 size_t count,
                                 double *mean,
                                 double *std);

/*
 Weak-submodularity constant: exact when `samples` is 0 (series of at
 most 14 frames), otherwise the largest of `samples` seeded draws.

 # Safety
 `out` must be writable.
 */
enum LwStatus lw_planner_wsc(const struct LwPlanner *planner,
                             size_t samples,
                             uint64_t seed,
                             double *out);

/*
 # Safety
 `planner` must be null or a handle not yet freed.
 */
void lw_planner_free(struct LwPlanner *planner);

#endif  /* LABELWISE_H */
