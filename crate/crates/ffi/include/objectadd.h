#ifndef OBJECTADD_H
#define OBJECTADD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 4 match the command line's exit codes.
 */
typedef enum OaStatus {
  OA_STATUS_OK = 0,
  OA_STATUS_IO = 1,
  OA_STATUS_CONFIG = 2,
  OA_STATUS_BACKEND = 3,
  OA_STATUS_SEGMENTATION = 4,
  OA_STATUS_NULL_POINTER = 5,
  OA_STATUS_INVALID_UTF8 = 6,
  OA_STATUS_NOT_FOUND = 7,
  OA_STATUS_PANIC = 8,
} OaStatus;

/**
 * A denoiser backend.
 */
typedef struct OaBackend OaBackend;

/**
 * Artifacts of a finished generate or edit job.
 */
typedef struct OaResult OaResult;

/**
 * Box in pixel coordinates.
 */
typedef struct OaBox {
  uint32_t top;
  uint32_t left;
  uint32_t height;
  uint32_t width;
} OaBox;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *oa_last_error_message(void);

/**
 * Builds a backend by name ("toy", "toy-forward") and weight seed.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OaStatus oa_backend_new(const char *name, uint64_t seed, struct OaBackend **out);

/**
 * # Safety
 * `backend` must come from `oa_backend_new` and not be used afterwards.
 */
void oa_backend_free(struct OaBackend *backend);

/**
 * Generates a base image.
 *
 * # Safety
 * Pointers must be valid; `prompt` NUL-terminated.
 */
enum OaStatus oa_generate(const struct OaBackend *backend,
                          const char *prompt,
                          uint64_t seed,
                          size_t total_steps,
                          struct OaResult **out);

/**
 * Adds the object described by `object_prompt` into `pixel_box` of the
 * image generated from `base_prompt` and `seed`.
 *
 * `config_json` may be NULL for default settings, otherwise a JSON object
 * of guidance settings. `object_png` may be NULL; when given, it is a PNG of
 * the object on a white background and the real-image path is used.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated; `object_png` must point
 * to `object_png_len` bytes when not NULL.
 */
enum OaStatus oa_edit(const struct OaBackend *backend,
                      const char *base_prompt,
                      const char *object_prompt,
                      uint64_t seed,
                      struct OaBox pixel_box,
                      const char *config_json,
                      const uint8_t *object_png,
                      size_t object_png_len,
                      struct OaResult **out);

/**
 * Borrows the bytes of an artifact file ("base.png", "edited.png",
 * "edit_mask.png", "refocused_mask.png", "expanded_mask.png",
 * "expanded_mask_full.png", "traces.json", "object.png").
 *
 * # Safety
 * `result` must be live; `name` NUL-terminated; `data` and `len` valid.
 */
enum OaStatus oa_result_file(const struct OaResult *result,
                             const char *name,
                             const uint8_t **data,
                             size_t *len);

/**
 * JSON reproducibility manifest of the job, owned by `result`.
 *
 * # Safety
 * `result` must be live or NULL.
 */
const char *oa_result_manifest_json(const struct OaResult *result);

/**
 * Step at which the expanded mask was swapped in, or -1 for generate jobs.
 *
 * # Safety
 * `result` must be live or NULL.
 */
int64_t oa_result_inpaint_step(const struct OaResult *result);

/**
 * # Safety
 * `result` must come from `oa_generate` or `oa_edit` and not be used
 * afterwards.
 */
void oa_result_free(struct OaResult *result);

/**
 * Mean absolute difference over pixels outside `mask`, averaged over every
 * pixel and channel. Images are `height*width*3` RGB bytes, the mask
 * `height*width` bytes with nonzero meaning inside.
 *
 * # Safety
 * Buffers must hold the stated number of bytes; `out` must be valid.
 */
enum OaStatus oa_by_pixels(const uint8_t *original,
                           const uint8_t *edited,
                           const uint8_t *mask,
                           size_t height,
                           size_t width,
                           double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBJECTADD_H */
