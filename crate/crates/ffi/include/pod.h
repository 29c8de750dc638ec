#ifndef POD_H
#define POD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PodStatus {
  POD_STATUS_OK = 0,
  POD_STATUS_NULL_POINTER = 1,
  POD_STATUS_INVALID_ARGUMENT = 2,
  POD_STATUS_IO = 3,
  POD_STATUS_PARSE = 4,
  POD_STATUS_CHECKPOINT = 5,
  POD_STATUS_CONTRACT = 6,
  POD_STATUS_NON_FINITE = 7,
  POD_STATUS_BUFFER_TOO_SMALL = 8,
  POD_STATUS_INTERNAL = 9,
} PodStatus;

// Opaque detector handle.
typedef struct PodModel PodModel;

// Box with normalized center and size.
typedef struct PodBox {
  uint8_t class_id;
  double cx;
  double cy;
  double w;
  double h;
} PodBox;

typedef struct PodDetection {
  struct PodBox bbox;
  double confidence;
} PodDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the
// next call into this library from the same thread.
const char *pod_last_error(void);

// Library version as a static NUL-terminated string.
const char *pod_version(void);

// Loads a checkpoint written by `pod train`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be valid for writes.
enum PodStatus pod_model_load(const char *path, struct PodModel **out);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must come from [`pod_model_load`] and not be used afterwards.
void pod_model_free(struct PodModel *model);

// Side of the square input the model resamples images to.
//
// # Safety
// `model` must be a live handle; `out` must be valid for writes.
enum PodStatus pod_model_input_size(const struct PodModel *model, size_t *out);

// Detects humans and patches in a row-major `width x height` image with
// values in `[0, 1]`. Detections are sorted by decreasing confidence.
//
// # Safety
// `pixels` must point to `width * height` values, `out` to `capacity`
// writable detections (or be null when `capacity` is 0), and `out_len` must
// be valid for writes.
enum PodStatus pod_model_predict(const struct PodModel *model,
                                 const double *pixels,
                                 size_t width,
                                 size_t height,
                                 double conf_threshold,
                                 double nms_iou,
                                 struct PodDetection *out,
                                 size_t capacity,
                                 size_t *out_len);

// Intersection over union of two boxes.
//
// # Safety
// All pointers must be valid.
enum PodStatus pod_iou(const struct PodBox *a, const struct PodBox *b, double *out);

// AP of class `class_id` at `iou_threshold` over a set of images.
// `det_images[i]` and `gt_images[j]` give the image each box belongs to.
//
// # Safety
// Each array must hold the stated number of elements (or be null when that
// number is 0); `out` must be valid for writes.
enum PodStatus pod_average_precision(const struct PodDetection *dets,
                                     const size_t *det_images,
                                     size_t n_dets,
                                     const struct PodBox *gts,
                                     const size_t *gt_images,
                                     size_t n_gts,
                                     uint8_t class_id,
                                     double iou_threshold,
                                     double *out);

// Applies the random patch augmentation with default settings.
//
// Writes the augmented image to `out_pixels` (`width * height` values) and
// the human labels followed by one patch box per applied patch to
// `out_labels`. Deterministic in `seed`.
//
// # Safety
// `pixels` and `out_pixels` must hold `width * height` values, `labels`
// `n_labels` boxes, `out_labels` `capacity` boxes; `out_len` must be valid
// for writes.
enum PodStatus pod_augment(const double *pixels,
                           size_t width,
                           size_t height,
                           const struct PodBox *labels,
                           size_t n_labels,
                           uint64_t seed,
                           double *out_pixels,
                           struct PodBox *out_labels,
                           size_t capacity,
                           size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POD_H */
