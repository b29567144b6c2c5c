#ifndef ERNET_H
#define ERNET_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status code returned by every fallible call.
 */
typedef enum ErnetStatus {
  ERNET_STATUS_OK = 0,
  ERNET_STATUS_NULL_POINTER = 1,
  ERNET_STATUS_INVALID_ARGUMENT = 2,
  ERNET_STATUS_IO_ERROR = 3,
  ERNET_STATUS_RUNTIME_ERROR = 4,
  ERNET_STATUS_PANIC = 5,
} ErnetStatus;

/*
 Opaque model handle.
 */
typedef struct ErnetModel ErnetModel;

/*
 Opaque volume handle.
 */
typedef struct ErnetVolume ErnetVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *ernet_version(void);

/*
 Message of the most recent error on this thread; empty when no error has
 occurred. The pointer stays valid until the next failing call on the
 same thread.
 */
const char *ernet_last_error(void);

/*
 Create a volume from a row-major (last axis contiguous) value buffer of
 length `w * h * d`; a null buffer gives zeros.

 # Safety
 `values` must be null or point to at least `w * h * d` readable f64s, and
 `out` must be a valid destination pointer.
 */
enum ErnetStatus ernet_volume_create(size_t w,
                                     size_t h,
                                     size_t d,
                                     const double *values,
                                     struct ErnetVolume **out);

/*
 Read a `.rvol` or NIfTI-1 volume from disk.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid destination.
 */
enum ErnetStatus ernet_volume_read(const char *path, struct ErnetVolume **out);

/*
 Write a volume; the extension picks the format (`.rvol` native,
 otherwise NIfTI-1 float32).

 # Safety
 `volume` must be a live handle and `path` a NUL-terminated string.
 */
enum ErnetStatus ernet_volume_write(const struct ErnetVolume *volume, const char *path);

/*
 Volume extents.

 # Safety
 All pointers must be valid.
 */
enum ErnetStatus ernet_volume_dims(const struct ErnetVolume *volume,
                                   size_t *w,
                                   size_t *h,
                                   size_t *d);

/*
 Copy the voxel values into a caller buffer of length `len` (which must
 equal the voxel count).

 # Safety
 `buffer` must point to `len` writable f64s.
 */
enum ErnetStatus ernet_volume_values(const struct ErnetVolume *volume, double *buffer, size_t len);

/*
 Release a volume handle; null is a no-op.

 # Safety
 `volume` must be null or a handle produced by this library, not yet
 freed.
 */
void ernet_volume_free(struct ErnetVolume *volume);

/*
 Build a fresh model. `manifest_json` may be null for the default
 configuration (5+5 stages, full widths) or a JSON model manifest.

 # Safety
 `manifest_json` must be null or NUL-terminated; `out` must be valid.
 */
enum ErnetStatus ernet_model_create(const char *manifest_json,
                                    uint64_t seed,
                                    struct ErnetModel **out);

/*
 Load a model directory (`model.json` plus weights).

 # Safety
 Pointer contracts as in [`ernet_model_create`].
 */
enum ErnetStatus ernet_model_load(const char *dir, struct ErnetModel **out);

/*
 Save a model directory.

 # Safety
 `model` must be a live handle, `dir` NUL-terminated.
 */
enum ErnetStatus ernet_model_save(const struct ErnetModel *model, const char *dir);

/*
 Release a model handle; null is a no-op.

 # Safety
 `model` must be null or a handle produced by this library, not yet
 freed.
 */
void ernet_model_free(struct ErnetModel *model);

/*
 Run inference in memory: the warped output, the cumulative binary mask,
 and the 12 final transform entries (normalized-centered convention).
 Any of the out pointers may be null to skip that output.

 # Safety
 Handles must be live; `transform12`, when non-null, must point to 12
 writable f64s.
 */
enum ErnetStatus ernet_infer_pair(const struct ErnetModel *model,
                                  const struct ErnetVolume *source,
                                  const struct ErnetVolume *target,
                                  struct ErnetVolume **warped,
                                  struct ErnetVolume **mask,
                                  double *transform12);

/*
 Run inference and write the artifact files under `out_dir`.

 # Safety
 Handles must be live and `out_dir` NUL-terminated.
 */
enum ErnetStatus ernet_infer_to_dir(const struct ErnetModel *model,
                                    const struct ErnetVolume *source,
                                    const struct ErnetVolume *target,
                                    const char *out_dir,
                                    bool emit_stages);

/*
 Train the model in place on a dataset directory or manifest.
 `config_json` may be null for defaults or a JSON train config;
 `val_dir` may be null to skip validation.

 # Safety
 `model` must be a live handle; strings NUL-terminated; `final_loss`,
 when non-null, must be writable.
 */
enum ErnetStatus ernet_train_dir(struct ErnetModel *model,
                                 const char *data_dir,
                                 const char *val_dir,
                                 const char *config_json,
                                 double *final_loss);

/*
 Score the model on a dataset with ground truth; mean Dice values come
 back through the out pointers (which may be null).

 # Safety
 `model` live, `data_dir` NUL-terminated, out pointers writable or null.
 */
enum ErnetStatus ernet_evaluate_dir(const struct ErnetModel *model,
                                    const char *data_dir,
                                    double *mean_dice_ext,
                                    double *mean_dice_reg);

/*
 Generate a synthetic phantom dataset with ground truth into `dir`.

 # Safety
 `dir` must be NUL-terminated.
 */
enum ErnetStatus ernet_phantom_dataset(const char *dir,
                                       size_t count,
                                       size_t extent,
                                       uint64_t seed,
                                       double translation_voxels,
                                       double rotation_degrees,
                                       double scale_min,
                                       double scale_max);

/*
 Dice overlap of two binary masks of equal length.

 # Safety
 `a` and `b` must point to `len` readable f64s; `out` writable.
 */
enum ErnetStatus ernet_dice(const double *a, const double *b, size_t len, double *out);

/*
 Run the oracle-equivalence and gradient suites; Ok when all pass.
 */
enum ErnetStatus ernet_verify(uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERNET_H */
