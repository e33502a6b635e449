#ifndef SPAGENT_H
#define SPAGENT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum SpStatus {
  SP_STATUS_OK = 0,
  SP_STATUS_NULL_POINTER = 1,
  SP_STATUS_DEGENERATE_POINT = 2,
  SP_STATUS_CONFIG = 3,
  SP_STATUS_IO = 4,
  SP_STATUS_FORMAT = 5,
  SP_STATUS_SHAPE = 6,
  SP_STATUS_ZERO_VARIANCE = 7,
  SP_STATUS_OTHER = 8,
  SP_STATUS_PANIC = 9,
} SpStatus;

/**
 * Opaque handle to a trained network plus its observation settings.
 */
typedef struct SpAgent SpAgent;

/**
 * Opaque volume handle.
 */
typedef struct SpVolume SpVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `len`) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sp_last_error(char *buf, size_t len);

/**
 * Plane `n . x = d` of a tangent point.
 *
 * # Safety
 * `tangent` and `normal` point to 3 doubles; `d` to one.
 */
enum SpStatus sp_tangent_to_plane(const double *tangent, double *normal, double *d);

/**
 * Tangent point of the plane `normal . x = d` (normal need not be unit).
 *
 * # Safety
 * `normal` and `tangent` point to 3 doubles.
 */
enum SpStatus sp_plane_to_tangent(const double *normal, double d, double *tangent);

/**
 * Angle (degrees) and distance difference (mm) between the planes of two
 * tangent points.
 *
 * # Safety
 * `pred` and `gt` point to 3 doubles; `ang_deg` and `dis_mm` to one each.
 */
enum SpStatus sp_plane_metrics(const double *pred,
                               const double *gt,
                               double *ang_deg,
                               double *dis_mm);

/**
 * Zero-normalized cross-correlation of two row-major images.
 *
 * # Safety
 * `a` and `b` point to `width * height` doubles; `result` to one.
 */
enum SpStatus sp_ncc(const double *a, const double *b, size_t width, size_t height, double *result);

/**
 * Structural similarity (11x11 Gaussian window, dynamic range 1).
 *
 * # Safety
 * `a` and `b` point to `width * height` doubles; `result` to one.
 */
enum SpStatus sp_ssim(const double *a,
                      const double *b,
                      size_t width,
                      size_t height,
                      double *result);

/**
 * Generates a phantom on a `grid`^3 lattice with 1 mm spacing and
 * default settings.
 *
 * # Safety
 * `volume` must be a valid pointer to a handle slot.
 */
enum SpStatus sp_volume_generate(uint64_t seed, size_t grid, struct SpVolume **volume);

/**
 * Loads an `SPVOL1` file.
 *
 * # Safety
 * `path` is a NUL-terminated string; `volume` a valid handle slot.
 */
enum SpStatus sp_volume_load(const char *path, struct SpVolume **volume);

/**
 * Writes a volume as `SPVOL1`.
 *
 * # Safety
 * `volume` is a live handle; `path` a NUL-terminated string.
 */
enum SpStatus sp_volume_save(const struct SpVolume *volume, const char *path);

/**
 * Releases a volume handle; null is ignored.
 *
 * # Safety
 * `volume` must come from this library and not be used afterwards.
 */
void sp_volume_free(struct SpVolume *volume);

/**
 * Grid dimensions and the ground-truth tangent point.
 *
 * # Safety
 * `dims` points to 3 `size_t`, `gt_tangent` to 3 doubles.
 */
enum SpStatus sp_volume_info(const struct SpVolume *volume, size_t *dims, double *gt_tangent);

/**
 * Samples the plane of `tangent` on an `extent` x `extent` grid with
 * `pitch` mm pixels into `pixels` (row-major, raw intensities).
 *
 * # Safety
 * `tangent` points to 3 doubles, `pixels` to `extent * extent` doubles.
 */
enum SpStatus sp_volume_reslice(const struct SpVolume *volume,
                                const double *tangent,
                                size_t extent,
                                double pitch,
                                double *pixels);

/**
 * Loads the online network of an `SPAGT1` checkpoint. `downsample` and
 * `pose_input` must match the training configuration; the frame extent
 * is inferred from the network input size.
 *
 * # Safety
 * `path` is a NUL-terminated string; `agent` a valid handle slot.
 */
enum SpStatus sp_agent_load(const char *path,
                            size_t downsample,
                            bool pose_input,
                            struct SpAgent **agent);

/**
 * Releases an agent handle; null is ignored.
 *
 * # Safety
 * `agent` must come from this library and not be used afterwards.
 */
void sp_agent_free(struct SpAgent *agent);

/**
 * Q-values of a raw network input of `len` doubles.
 *
 * # Safety
 * `input` points to `len` doubles, `q` to 6.
 */
enum SpStatus sp_agent_q_values(const struct SpAgent *agent,
                                const double *input,
                                size_t len,
                                double *q);

/**
 * Runs one greedy episode from `start` and reports the final tangent
 * point, the step count and the plane metrics against the ground truth.
 *
 * # Safety
 * `start` and `end` point to 3 doubles; the other outputs to one value.
 */
enum SpStatus sp_agent_search(const struct SpAgent *agent,
                              const struct SpVolume *volume,
                              const double *start,
                              double *end,
                              size_t *steps,
                              double *ang_deg,
                              double *dis_mm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPAGENT_H */
