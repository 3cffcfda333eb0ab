#ifndef VLSOT_H
#define VLSOT_H

/* Generated by cbindgen from the vlsot-capi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum VlsotStatus {
  VlsotStatus_Ok = 0,
  VlsotStatus_NullArgument = 1,
  VlsotStatus_InvalidArgument = 2,
  VlsotStatus_IoError = 3,
  VlsotStatus_RuntimeError = 4,
} VlsotStatus;

/**
 * Opaque tracker handle. Field order keeps the per-sequence state ahead
 * of the bundle it borrows, so it drops first.
 */
typedef struct VlsotTracker VlsotTracker;

/**
 * Borrowed 8-bit RGB frame, interleaved, row-major, no padding.
 */
typedef struct VlsotFrame {
  const uint8_t *data;
  uint32_t width;
  uint32_t height;
} VlsotFrame;

/**
 * Axis-aligned box: top-left corner plus extents, in pixels.
 */
typedef struct VlsotBox {
  double x;
  double y;
  double w;
  double h;
} VlsotBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the most recent error message (UTF-8, NUL-terminated) into `buf`;
 * returns the full message length excluding the terminator.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (query mode).
 */
size_t vlsot_last_error_message(char *buf, size_t cap);

/**
 * Static library version string.
 */
const char *vlsot_version(void);

/**
 * Load a tracker model from a checkpoint file. `use_language = 0`
 * replaces descriptions with the all-padding token sequence.
 *
 * # Safety
 * `ckpt_path` must be a NUL-terminated string; `out` must be writable.
 */
enum VlsotStatus vlsot_tracker_load(const char *ckpt_path,
                                    int use_language,
                                    struct VlsotTracker **out);

/**
 * Start tracking a sequence: first frame, its target box, and the
 * language description (may be null or empty).
 *
 * # Safety
 * `tracker` must come from `vlsot_tracker_load`; `description`, when not
 * null, must be NUL-terminated; the frame buffer must hold
 * `width * height * 3` bytes.
 */
enum VlsotStatus vlsot_tracker_init(struct VlsotTracker *tracker,
                                    struct VlsotFrame frame,
                                    struct VlsotBox init_box,
                                    const char *description);

/**
 * Predict the target box in the next frame.
 *
 * # Safety
 * `tracker` must be initialized; `out_box` must be writable; the frame
 * buffer must hold `width * height * 3` bytes.
 */
enum VlsotStatus vlsot_tracker_step(struct VlsotTracker *tracker,
                                    struct VlsotFrame frame,
                                    struct VlsotBox *out_box);

/**
 * Release a tracker handle; null is a no-op.
 *
 * # Safety
 * `tracker` must come from `vlsot_tracker_load` and not be used after.
 */
void vlsot_tracker_free(struct VlsotTracker *tracker);

/**
 * Generalized IoU of two boxes, in `(-1, 1]`.
 */
double vlsot_giou(struct VlsotBox a, struct VlsotBox b);

/**
 * Plain IoU of two boxes.
 */
double vlsot_iou(struct VlsotBox a, struct VlsotBox b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLSOT_H */
