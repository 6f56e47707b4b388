#ifndef THN_H
#define THN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum thn_status {
  THN_STATUS_OK = 0,
  THN_STATUS_NULL_ARGUMENT = 1,
  THN_STATUS_INVALID_ARGUMENT = 2,
  THN_STATUS_CONFIG = 3,
  THN_STATUS_CHECKPOINT = 4,
  THN_STATUS_IO = 5,
  THN_STATUS_DIMENSION = 6,
  THN_STATUS_DOMAIN = 7,
  THN_STATUS_USAGE = 8,
  THN_STATUS_EVAL = 9,
  THN_STATUS_INTERNAL = 10,
} thn_status;

// Opaque tracker handle.
typedef struct thn_tracker thn_tracker;

// Axis-aligned box: top-left corner `(x, y)` and size `(w, h)`.
typedef struct thn_box {
  double x;
  double y;
  double w;
  double h;
} thn_box;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread; empty if none. The pointer
// stays valid until the next failing call on the same thread.
const char *thn_last_error(void);

// Library version as a static NUL-terminated string.
const char *thn_version(void);

// Loads a network from `checkpoint` under the config file at `config`
// (null selects the built-in defaults) and stores a new handle in `*out`.
//
// # Safety
// `config` is null or a NUL-terminated string; `checkpoint` is a
// NUL-terminated string; `out` is a valid pointer.
enum thn_status thn_tracker_open(const char *config,
                                 const char *checkpoint,
                                 struct thn_tracker **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `tracker` is null or came from [`thn_tracker_open`] and was not freed.
void thn_tracker_free(struct thn_tracker *tracker);

// Starts tracking `target` in an interleaved RGB frame of `width * height * 3` bytes.
//
// # Safety
// `tracker` is a live handle; `rgb` points to `width * height * 3` bytes.
enum thn_status thn_tracker_init(struct thn_tracker *tracker,
                                 const uint8_t *rgb,
                                 size_t width,
                                 size_t height,
                                 struct thn_box target);

// Tracks into the next frame; writes the box and its confidence.
//
// # Safety
// As for [`thn_tracker_init`]; `out_box` is valid; `out_confidence` is
// null or valid.
enum thn_status thn_tracker_update(struct thn_tracker *tracker,
                                   const uint8_t *rgb,
                                   size_t width,
                                   size_t height,
                                   struct thn_box *out_box,
                                   double *out_confidence);

// Intersection over union of two boxes.
//
// # Safety
// `out` is a valid pointer.
enum thn_status thn_iou(struct thn_box a, struct thn_box b, double *out);

// Success-plot AUC and precision at 20 px for `n` predicted and
// ground-truth boxes.
//
// # Safety
// `pred` and `gt` point to `n` boxes each; the outputs are valid or null.
enum thn_status thn_success_auc(const struct thn_box *pred,
                                const struct thn_box *gt,
                                size_t n,
                                double *out_auc,
                                double *out_precision_20);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* THN_H */
