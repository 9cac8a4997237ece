#ifndef NIDE_H
#define NIDE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call.
 */
typedef enum NideStatus {
  NIDE_STATUS_OK = 0,
  /*
   A required pointer was null.
   */
  NIDE_STATUS_NULL_POINTER = 1,
  /*
   A string argument was not valid UTF-8.
   */
  NIDE_STATUS_INVALID_UTF8 = 2,
  NIDE_STATUS_INVALID_ARGUMENT = 3,
  /*
   Unreadable, malformed or inconsistent files.
   */
  NIDE_STATUS_DATA = 4,
  NIDE_STATUS_IO = 5,
  NIDE_STATUS_SOLVER = 6,
  /*
   Training stopped on a non-finite loss; the handle holds the last good fit.
   */
  NIDE_STATUS_DIVERGED = 7,
  NIDE_STATUS_BUFFER_TOO_SMALL = 8,
  NIDE_STATUS_INDEX_OUT_OF_RANGE = 9,
  NIDE_STATUS_PANIC = 10,
} NideStatus;

/*
 Fitted model.
 */
typedef struct NideCheckpoint NideCheckpoint;

/*
 Loaded or generated trajectories.
 */
typedef struct NideDataset NideDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *nide_version(void);

/*
 Message of the last failed call on this thread, or null after a success.
 Valid until the next call on this thread.
 */
const char *nide_last_error(void);

/*
 Load a dataset from its directory or manifest.

 # Safety
 `path` is a NUL-terminated string; `out` is valid for one write.
 */
enum NideStatus nide_dataset_load(const char *path, struct NideDataset **out);

/*
 Generate `curves` trajectories of a named system at its default window
 and sampling.

 # Safety
 `system` is a NUL-terminated string; `out` is valid for one write.
 */
enum NideStatus nide_dataset_generate(const char *system,
                                      uintptr_t curves,
                                      uint64_t seed,
                                      struct NideDataset **out);

/*
 Write the dataset to `dir` in the on-disk dataset format.

 # Safety
 `ds` is a live handle; `dir` is a NUL-terminated string.
 */
enum NideStatus nide_dataset_write(const struct NideDataset *ds, const char *dir);

/*
 Number of trajectories; 0 for a null handle.

 # Safety
 `ds` is null or a live handle.
 */
uintptr_t nide_dataset_len(const struct NideDataset *ds);

/*
 State dimension; 0 for a null handle.

 # Safety
 `ds` is null or a live handle.
 */
uintptr_t nide_dataset_dim(const struct NideDataset *ds);

/*
 Observation count of trajectory `index`.

 # Safety
 `ds` is a live handle; `points` is valid for one write.
 */
enum NideStatus nide_dataset_points(const struct NideDataset *ds,
                                    uintptr_t index,
                                    uintptr_t *points);

/*
 Copy trajectory `index`: `times` gets T values, `states` T·n row-major.

 # Safety
 `ds` is a live handle; `times` and `states` are valid for `times_cap`
 and `states_cap` writes.
 */
enum NideStatus nide_dataset_trajectory(const struct NideDataset *ds,
                                        uintptr_t index,
                                        double *times,
                                        uintptr_t times_cap,
                                        double *states,
                                        uintptr_t states_cap);

/*
 # Safety
 `ds` is null or a handle from this library not yet freed.
 */
void nide_dataset_free(struct NideDataset *ds);

/*
 Fit a model to a dataset.

 `config` is null or TOML with optional `seed`, `[model]` and `[train]`
 tables, as in a CLI `run_config.toml`. Without `[model]` a NIDE with
 default widths is fitted; `node = true` swaps in the parameter-matched NODE.
 On [`NideStatus::Diverged`] `*out` still receives the last good fit.

 # Safety
 `ds` is a live handle; `config` is null or NUL-terminated; `out` is valid
 for one write.
 */
enum NideStatus nide_train(const struct NideDataset *ds,
                           const char *config,
                           bool node,
                           struct NideCheckpoint **out);

/*
 Load a checkpoint from its directory or manifest.

 # Safety
 `path` is a NUL-terminated string; `out` is valid for one write.
 */
enum NideStatus nide_checkpoint_load(const char *path, struct NideCheckpoint **out);

/*
 # Safety
 `ckpt` is a live handle; `dir` is a NUL-terminated string.
 */
enum NideStatus nide_checkpoint_save(const struct NideCheckpoint *ckpt, const char *dir);

/*
 State dimension; 0 for a null handle.

 # Safety
 `ckpt` is null or a live handle.
 */
uintptr_t nide_checkpoint_state_dim(const struct NideCheckpoint *ckpt);

/*
 Solve from `y0` (length n) over `points` evenly spaced times in
 `[t0, t1]`, writing `points·n` row-major states.

 # Safety
 `ckpt` is a live handle; `y0` is valid for `n` reads; `states` for
 `states_cap` writes.
 */
enum NideStatus nide_checkpoint_predict(const struct NideCheckpoint *ckpt,
                                        const double *y0,
                                        uintptr_t n,
                                        double t0,
                                        double t1,
                                        uintptr_t points,
                                        double *states,
                                        uintptr_t states_cap);

/*
 Pooled MSE of predictions from each trajectory's initial condition.

 # Safety
 `ckpt` and `ds` are live handles; `mse` is valid for one write.
 */
enum NideStatus nide_checkpoint_mse(const struct NideCheckpoint *ckpt,
                                    const struct NideDataset *ds,
                                    double *mse);

/*
 # Safety
 `ckpt` is null or a handle from this library not yet freed.
 */
void nide_checkpoint_free(struct NideCheckpoint *ckpt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NIDE_H */
