#ifndef MARF_H
#define MARF_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Call outcome. Nonzero values are failures.
typedef enum MarfStatus {
  MARF_STATUS_OK = 0,
  MARF_STATUS_NULL_POINTER = 1,
  MARF_STATUS_INVALID_ARGUMENT = 2,
  MARF_STATUS_IO = 3,
  MARF_STATUS_FORMAT = 4,
  MARF_STATUS_NUMERICAL = 5,
  MARF_STATUS_CHECKPOINT = 6,
  // A Rust panic was caught at the boundary.
  MARF_STATUS_INTERNAL = 7,
} MarfStatus;

// A trained radiance field.
typedef struct MarfField MarfField;

// A float image with 1 or 3 interleaved channels in `[0, 1]`.
typedef struct MarfImage MarfImage;

// Pinhole camera: focal lengths and principal point in pixels.
typedef struct MarfIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} MarfIntrinsics;

// Camera-to-world transform: row-major rotation and camera centre. The
// camera looks along its `+z` axis.
typedef struct MarfPose {
  double rotation[9];
  double center[3];
} MarfPose;

typedef struct MarfRenderOptions {
  uint32_t samples;
  double background[3];
  double aabb_min[3];
  double aabb_max[3];
} MarfRenderOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next failing call on the same thread.
const char *marf_last_error(void);

// Library version as a static NUL-terminated string.
const char *marf_version(void);

// Loads the field stored in a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum MarfStatus marf_field_load(const char *path, struct MarfField **out_field);

// # Safety
// `field` must come from [`marf_field_load`] and not be used afterwards.
void marf_field_free(struct MarfField *field);

// Decodes a PNG or JPEG file.
//
// # Safety
// `path` must be a NUL-terminated string and `out_image` a valid pointer.
enum MarfStatus marf_image_load(const char *path, struct MarfImage **out_image);

// Copies `width * height * channels` interleaved floats into a new image.
//
// # Safety
// `data` must point to that many readable floats.
enum MarfStatus marf_image_new(uintptr_t width,
                               uintptr_t height,
                               uintptr_t channels,
                               const float *data,
                               struct MarfImage **out_image);

// Writes an 8-bit PNG.
//
// # Safety
// `image` must be a live handle and `path` a NUL-terminated string.
enum MarfStatus marf_image_save(const struct MarfImage *image, const char *path);

// Width, height and channel count; any out pointer may be null.
//
// # Safety
// `image` must be a live handle.
enum MarfStatus marf_image_shape(const struct MarfImage *image,
                                 uintptr_t *width,
                                 uintptr_t *height,
                                 uintptr_t *channels);

// Borrowed pointer to the interleaved pixels, valid while `image` lives.
//
// # Safety
// `image` must be a live handle or null.
const float *marf_image_data(const struct MarfImage *image);

// # Safety
// `image` must come from this library and not be used afterwards.
void marf_image_free(struct MarfImage *image);

// Renders `field` from one camera.
//
// # Safety
// All pointers must be valid; `field` must be a live handle.
enum MarfStatus marf_render(const struct MarfField *field,
                            const struct MarfIntrinsics *intrinsics,
                            const struct MarfPose *pose,
                            const struct MarfRenderOptions *options,
                            struct MarfImage **out_image);

// Peak signal-to-noise ratio in dB; `+inf` for identical images.
//
// # Safety
// Both images must be live handles and `out_db` valid.
enum MarfStatus marf_psnr(const struct MarfImage *a, const struct MarfImage *b, double *out_db);

// Variance of the Laplacian of the luma image, in `[0, 1]` intensity units.
//
// # Safety
// `image` must be a live handle and `out_variance` valid.
enum MarfStatus marf_laplacian_variance(const struct MarfImage *image, double *out_variance);

// 64-bit perceptual hash.
//
// # Safety
// `image` must be a live handle and `out_hash` valid.
enum MarfStatus marf_perceptual_hash(const struct MarfImage *image, uint64_t *out_hash);

// Hamming distance between two perceptual hashes.
uint32_t marf_hash_distance(uint64_t a, uint64_t b);

// Pixel-wise mean and population standard deviation over `count`
// single-channel renders of one viewpoint.
//
// # Safety
// `replicas` must point to `count` live image handles; out pointers valid.
enum MarfStatus marf_uncertainty(const struct MarfImage *const *replicas,
                                 uintptr_t count,
                                 struct MarfImage **out_mean,
                                 struct MarfImage **out_sigma);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MARF_H */
