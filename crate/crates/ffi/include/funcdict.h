#ifndef FUNCDICT_H
#define FUNCDICT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum FdStatus {
  FD_STATUS_OK = 0,
  /*
   A required pointer argument was NULL.
   */
  FD_STATUS_NULL_ARGUMENT = 1,
  /*
   Malformed input, including buffer lengths that do not match the data.
   */
  FD_STATUS_INVALID_ARGUMENT = 2,
  FD_STATUS_INVALID_CONFIG = 3,
  /*
   Non-finite values or a failed numerical routine.
   */
  FD_STATUS_NUMERIC = 4,
  FD_STATUS_IO = 5,
  FD_STATUS_PARSE = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  FD_STATUS_PANIC = 7,
} FdStatus;

/*
 Synthetic shapes with part labels.
 */
typedef struct FdDataset FdDataset;

/*
 Network parameters together with the dictionary constraint they were trained for.
 */
typedef struct FdModel FdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *fd_version(void);

/*
 Message of the last failed call on this thread, or NULL if none failed yet.

 The pointer stays valid until the next failing call on the same thread.
 */
const char *fd_last_error(void);

/*
 Generates `count` shapes of `preset` (`table4`, `chair6` or `boxesN`) with default family settings.

 # Safety
 `preset` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum FdStatus fd_dataset_generate(const char *preset,
                                  size_t count,
                                  size_t n_points,
                                  uint64_t seed,
                                  struct FdDataset **out);

/*
 Reads a JSONL dataset written by `funcdict gen-data` or [`fd_dataset_save`].

 # Safety
 `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum FdStatus fd_dataset_load(const char *path, struct FdDataset **out);

/*
 # Safety
 `ds` must be a live dataset handle and `path` a NUL-terminated string.
 */
enum FdStatus fd_dataset_save(const struct FdDataset *ds, const char *path);

/*
 Number of shapes; 0 for a NULL handle.

 # Safety
 `ds` must be NULL or a live dataset handle.
 */
size_t fd_dataset_len(const struct FdDataset *ds);

/*
 # Safety
 `ds` must be a live dataset handle and `n_points` writable.
 */
enum FdStatus fd_dataset_num_points(const struct FdDataset *ds, size_t index, size_t *n_points);

/*
 Copies the normalized coordinates of shape `index` as `n x 3` values; `len` must be `3 n`.

 # Safety
 `ds` must be a live dataset handle and `xyz` must hold `len` doubles.
 */
enum FdStatus fd_dataset_points(const struct FdDataset *ds, size_t index, double *xyz, size_t len);

/*
 Copies the per-point part labels of shape `index`; `len` must equal its point count.

 # Safety
 `ds` must be a live dataset handle and `labels` must hold `len` values.
 */
enum FdStatus fd_dataset_labels(const struct FdDataset *ds,
                                size_t index,
                                size_t *labels,
                                size_t len);

/*
 # Safety
 `ds` must be NULL or a handle not yet freed.
 */
void fd_dataset_free(struct FdDataset *ds);

/*
 Freshly initialized network with the default layer widths and `k` atoms.

 # Safety
 `mode` must be a NUL-terminated string (`seg`, `key` or `map`) and `out` a writable handle slot.
 */
enum FdStatus fd_model_init(const char *mode, size_t k, uint64_t seed, struct FdModel **out);

/*
 Loads the parameters of a training checkpoint.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable handle slot.
 */
enum FdStatus fd_model_load(const char *path, struct FdModel **out);

/*
 Number of atoms; 0 for a NULL handle.

 # Safety
 `model` must be NULL or a live model handle.
 */
size_t fd_model_k(const struct FdModel *model);

/*
 Predicts the `n x k` dictionary for a cloud of `n` points given as `n x 3` coordinates.

 Points are used as given, so pass clouds normalized like the dataset's.

 # Safety
 `model` must be a live model handle, `xyz` must hold `3 n` doubles and `a` must hold `len` doubles.
 */
enum FdStatus fd_model_forward(const struct FdModel *model,
                               const double *xyz,
                               size_t n,
                               double *a,
                               size_t len);

/*
 # Safety
 `model` must be NULL or a handle not yet freed.
 */
void fd_model_free(struct FdModel *model);

/*
 Solves `min ||A x - f||^2` over `x` in `[0, 1]^cols` for a `rows x cols` matrix `A`.

 # Safety
 `a` must hold `rows * cols` doubles, `f` `rows` doubles and `x` `cols` doubles;
 `residual` may be NULL.
 */
enum FdStatus fd_solve_box_ls(const double *a,
                              size_t rows,
                              size_t cols,
                              const double *f,
                              double *x,
                              double *residual);

/*
 Maximum-profit assignment of rows to columns.

 `mapping[r]` receives the matched column or -1; exactly `min(rows, cols)` rows are matched.

 # Safety
 `profit` must hold `rows * cols` doubles and `mapping` `rows` values; `total` may be NULL.
 */
enum FdStatus fd_hungarian_max(const double *profit,
                               size_t rows,
                               size_t cols,
                               int64_t *mapping,
                               double *total);

/*
 Mean IoU of the ground-truth parts after matching them one-to-one to the atoms of
 the `n x k` dictionary `a`, with each point assigned to its largest atom.

 # Safety
 `a` must hold `n * k` doubles, `labels` `n` values and `miou` must be writable.
 */
enum FdStatus fd_matched_miou(const double *a,
                              size_t n,
                              size_t k,
                              const size_t *labels,
                              double *miou);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUNCDICT_H */
