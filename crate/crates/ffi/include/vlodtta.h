#ifndef VLODTTA_H
#define VLODTTA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum VlodttaStatus {
  VLODTTA_STATUS_OK = 0,
  VLODTTA_STATUS_NULL_POINTER = 1,
  VLODTTA_STATUS_INVALID_UTF8 = 2,
  VLODTTA_STATUS_INVALID_JSON = 3,
  /**
   * Bad configuration value, method name, or box.
   */
  VLODTTA_STATUS_INVALID_ARGUMENT = 4,
  VLODTTA_STATUS_SHAPE_MISMATCH = 5,
  /**
   * Non-finite value or degenerate normalization.
   */
  VLODTTA_STATUS_NUMERIC_ERROR = 6,
  VLODTTA_STATUS_EMPTY_IMAGE = 7,
  /**
   * A panic was caught at the boundary; the engine should be discarded.
   */
  VLODTTA_STATUS_PANIC = 8,
} VlodttaStatus;

/**
 * Adaptation engine for one feature dimension. Reset to its initial
 * parameters after every episode, so a handle can be reused across images
 * but must not be shared between threads without external locking.
 */
typedef struct VlodttaEngine VlodttaEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine for `dim`-dimensional features. `config_json` holds
 * episode parameters as a JSON object (missing keys take defaults) and may
 * be null for all defaults.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is valid for one
 * pointer write.
 */
enum VlodttaStatus vlodtta_engine_new(const char *config_json,
                                      size_t dim,
                                      struct VlodttaEngine **out);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` is null or came from [`vlodtta_engine_new`] and is not used
 * afterwards.
 */
void vlodtta_engine_free(struct VlodttaEngine *engine);

/**
 * Runs `method` ("zs", "entropy", "pa" or "vlodtta") on a scene document and
 * writes the detections as a JSON array to `out_json`.
 *
 * # Safety
 * `engine` came from [`vlodtta_engine_new`]; the strings are NUL-terminated;
 * `out_json` is valid for one pointer write.
 */
enum VlodttaStatus vlodtta_engine_run(struct VlodttaEngine *engine,
                                      const char *scene_json,
                                      const char *method,
                                      char **out_json);

/**
 * Runs one adaptation episode with the engine's own parameters and writes
 * its trace (loss, gradient norms, selections, clusters, detections) as JSON.
 *
 * # Safety
 * As for [`vlodtta_engine_run`].
 */
enum VlodttaStatus vlodtta_engine_adapt(struct VlodttaEngine *engine,
                                        const char *scene_json,
                                        char **out_json);

/**
 * 1 when the engine holds its initial parameters, 0 when not, -1 for null.
 *
 * # Safety
 * `engine` is null or came from [`vlodtta_engine_new`].
 */
int32_t vlodtta_engine_is_pristine(const struct VlodttaEngine *engine);

/**
 * COCO-style AP over a JSON array of `{"detections": [...], "ground_truth":
 * [...]}` images for classes `0..num_classes`; writes the report as JSON.
 *
 * # Safety
 * `images_json` is NUL-terminated; `out_json` is valid for one pointer write.
 */
enum VlodttaStatus vlodtta_evaluate(const char *images_json, size_t num_classes, char **out_json);

/**
 * IoU of two `[x1, y1, x2, y2]` boxes.
 *
 * # Safety
 * `a` and `b` point to four doubles each; `out` is valid for one write.
 */
enum VlodttaStatus vlodtta_iou(const double *a, const double *b, double *out);

/**
 * Trainable adapter parameters, weights plus biases, for dimension `dim`
 * and reduction `reduction`.
 *
 * # Safety
 * `out` is valid for one write.
 */
enum VlodttaStatus vlodtta_adapter_param_count(size_t dim, size_t reduction, size_t *out);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *vlodtta_last_error(void);

/**
 * Releases a string returned through an `out_json` parameter. Null is
 * ignored.
 *
 * # Safety
 * `s` is null or came from this library and is not used afterwards.
 */
void vlodtta_string_free(char *s);

/**
 * Library version, a static NUL-terminated string.
 */
const char *vlodtta_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VLODTTA_H */
