/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SGFACTOR_H
#define SGFACTOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum SgfStatus {
  SGF_STATUS_OK = 0,
  SGF_STATUS_NULL_POINTER = 1,
  SGF_STATUS_INVALID_ARGUMENT = 2,
  /*
   Malformed input file or unparsable cell.
   */
  SGF_STATUS_PARSE = 3,
  SGF_STATUS_IO = 4,
  /*
   Rank deficiency, degenerate direction or an undefined BIC.
   */
  SGF_STATUS_NUMERICAL = 5,
  /*
   No tuning candidate was usable.
   */
  SGF_STATUS_TUNING = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  SGF_STATUS_PANIC = 7,
} SgfStatus;

/*
 A fitted p×r loading matrix with its tuning outcome.
 */
typedef struct SgfEstimate SgfEstimate;

/*
 Contiguous variable groups for each loading column.
 */
typedef struct SgfGroups SgfGroups;

/*
 A T×p panel of observations.
 */
typedef struct SgfPanel SgfPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if none. The
 pointer stays valid until the next failing call on this thread.
 */
const char *sgf_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sgf_version(void);

/*
 Builds a panel from `n * p` row-major values.

 # Safety
 `data` must point to `n * p` readable doubles and `out` to a writable
 pointer.
 */
enum SgfStatus sgf_panel_new(const double *data, size_t n, size_t p, struct SgfPanel **out);

/*
 Reads a CSV panel; with `has_header` the first row holds series labels.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SgfStatus sgf_panel_load_csv(const char *path, bool has_header, struct SgfPanel **out);

/*
 Number of time points, or 0 for a null handle.

 # Safety
 `panel` must be null or a live handle.
 */
size_t sgf_panel_n(const struct SgfPanel *panel);

/*
 Number of series, or 0 for a null handle.

 # Safety
 `panel` must be null or a live handle.
 */
size_t sgf_panel_p(const struct SgfPanel *panel);

/*
 # Safety
 `panel` must be null or a handle not yet freed.
 */
void sgf_panel_free(struct SgfPanel *panel);

/*
 The same consecutive blocks of the given sizes for all `r` columns.

 # Safety
 `sizes` must point to `count` readable values and `out` to a writable
 pointer.
 */
enum SgfStatus sgf_groups_from_sizes(const size_t *sizes,
                                     size_t count,
                                     size_t r,
                                     struct SgfGroups **out);

/*
 Reads group JSON with 1-based inclusive ranges.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SgfStatus sgf_groups_load_json(const char *path, size_t r, struct SgfGroups **out);

/*
 # Safety
 `groups` must be null or a handle not yet freed.
 */
void sgf_groups_free(struct SgfGroups *groups);

/*
 Estimates an `r`-column sparse-group loading matrix.

 A NaN `lambda1` or `lambda2` selects that level by BIC over the default
 grid; any other value must be non-negative and is used as given. The
 groups must cover `1..=p` for each of the `r` columns.

 # Safety
 `panel` and `groups` must be live handles and `out` a writable pointer.
 */
enum SgfStatus sgf_estimate(const struct SgfPanel *panel,
                            const struct SgfGroups *groups,
                            size_t r,
                            size_t h0,
                            double lambda1,
                            double lambda2,
                            uint64_t seed,
                            struct SgfEstimate **out);

/*
 Rows `p` and columns `r` of the loading matrix.

 # Safety
 `est` must be a live handle; `p` and `r` must be writable.
 */
enum SgfStatus sgf_estimate_shape(const struct SgfEstimate *est, size_t *p, size_t *r);

/*
 Copies the p×r loading matrix row-major into `buf` of length `len`.

 # Safety
 `est` must be a live handle and `buf` must have room for `len` doubles.
 */
enum SgfStatus sgf_estimate_loadings(const struct SgfEstimate *est, double *buf, size_t len);

/*
 Selected penalty levels.

 # Safety
 `est` must be a live handle; `lambda1` and `lambda2` must be writable.
 */
enum SgfStatus sgf_estimate_lambdas(const struct SgfEstimate *est,
                                    double *lambda1,
                                    double *lambda2);

/*
 1 if every column solve converged, 0 if not, -1 for a null handle.

 # Safety
 `est` must be null or a live handle.
 */
int32_t sgf_estimate_converged(const struct SgfEstimate *est);

/*
 # Safety
 `est` must be null or a handle not yet freed.
 */
void sgf_estimate_free(struct SgfEstimate *est);

/*
 Distance between the column spans of two row-major p×r matrices, in
 `[0, 1]`.

 # Safety
 `a` and `b` must each point to `p * r` readable doubles and `out` must be
 writable.
 */
enum SgfStatus sgf_subspace_distance(const double *a,
                                     const double *b,
                                     size_t p,
                                     size_t r,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGFACTOR_H */
