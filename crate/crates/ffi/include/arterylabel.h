#ifndef ARTERYLABEL_H
#define ARTERYLABEL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AlStatus {
  AL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  AL_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument was out of range or not valid UTF-8.
   */
  AL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File could not be read or written.
   */
  AL_STATUS_IO = 3,
  /**
   * File contents could not be parsed.
   */
  AL_STATUS_PARSE = 4,
  /**
   * Checkpoint is corrupt or does not match its architecture.
   */
  AL_STATUS_CHECKPOINT = 5,
  /**
   * Inputs are inconsistent with each other or with the model.
   */
  AL_STATUS_DATA = 6,
  /**
   * Non-finite values appeared during computation.
   */
  AL_STATUS_NUMERIC = 7,
  /**
   * A bug: the library panicked.
   */
  AL_STATUS_INTERNAL = 8,
} AlStatus;

/**
 * Set of centerline polylines.
 */
typedef struct AlCenterlines AlCenterlines;

/**
 * Labeled voxel mask.
 */
typedef struct AlMask AlMask;

/**
 * Trained network.
 */
typedef struct AlModel AlModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failed call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *al_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *al_version(void);

/**
 * Reads a `.vmask` file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum AlStatus al_mask_load(const char *path, struct AlMask **out);

/**
 * Writes a `.vmask` file.
 *
 * # Safety
 * `mask` must come from this library; `path` must be nul-terminated.
 */
enum AlStatus al_mask_save(const struct AlMask *mask, const char *path);

/**
 * Grid dimensions (x, y, z) into `dims[0..3]`.
 *
 * # Safety
 * `mask` must come from this library; `dims` must hold 3 values.
 */
enum AlStatus al_mask_dims(const struct AlMask *mask, size_t *dims);

/**
 * Borrowed view of the voxel labels, x fastest. The pointer stays valid
 * until the mask is freed.
 *
 * # Safety
 * `mask` must come from this library; `data` and `len` must be writable.
 */
enum AlStatus al_mask_labels(const struct AlMask *mask, const uint8_t **data, size_t *len);

/**
 * # Safety
 * `mask` must come from this library (or be null) and not be used again.
 */
void al_mask_free(struct AlMask *mask);

/**
 * Reads a checkpoint.
 *
 * # Safety
 * `path` must be nul-terminated; `out` must be writable.
 */
enum AlStatus al_model_load(const char *path, struct AlModel **out);

/**
 * Number of branch classes the model predicts (labels `1..=count`).
 *
 * # Safety
 * `model` must come from this library; `count` must be writable.
 */
enum AlStatus al_model_num_classes(const struct AlModel *model, size_t *count);

/**
 * # Safety
 * `model` must come from this library (or be null) and not be used again.
 */
void al_model_free(struct AlModel *model);

/**
 * Labels every foreground voxel of `mask`: `sample_count` voxels drawn
 * with `seed` are classified, the rest take the label of the nearest
 * sample. The result is a new mask owned by the caller.
 *
 * # Safety
 * Handles must come from this library; `out` must be writable.
 */
enum AlStatus al_label_mask(const struct AlModel *model,
                            const struct AlMask *mask,
                            size_t sample_count,
                            uint64_t seed,
                            struct AlMask **out);

/**
 * Reads a centerline JSON file.
 *
 * # Safety
 * `path` must be nul-terminated; `out` must be writable.
 */
enum AlStatus al_centerlines_load(const char *path, struct AlCenterlines **out);

/**
 * Number of branches.
 *
 * # Safety
 * `lines` must come from this library; `count` must be writable.
 */
enum AlStatus al_centerlines_count(const struct AlCenterlines *lines, size_t *count);

/**
 * # Safety
 * `lines` must come from this library (or be null) and not be used again.
 */
void al_centerlines_free(struct AlCenterlines *lines);

/**
 * Names each branch by the class covering most of its centerline dilated
 * by `radius` mm in `labeled`. Writes one class per branch into `classes`
 * (0 = unassigned) and, if `rates` is not null, the winning overlap rate.
 * Classes `1..=num_classes` are scored.
 *
 * # Safety
 * Handles must come from this library; `classes` (and `rates`, when not
 * null) must hold `al_centerlines_count` values.
 */
enum AlStatus al_label_centerlines(const struct AlCenterlines *lines,
                                   const struct AlMask *labeled,
                                   double radius,
                                   uint8_t num_classes,
                                   uint8_t *classes,
                                   double *rates);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARTERYLABEL_H */
