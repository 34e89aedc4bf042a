#ifndef FIELDFORGE_H
#define FIELDFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FfStatus {
  FF_STATUS_OK = 0,
  FF_STATUS_NULL_POINTER = 1,
  FF_STATUS_INVALID_ARGUMENT = 2,
  FF_STATUS_IO = 3,
  FF_STATUS_FORMAT = 4,
  FF_STATUS_NUMERIC = 5,
  FF_STATUS_SHAPE_MISMATCH = 6,
  FF_STATUS_PANIC = 7,
} FfStatus;

typedef enum FfGridKind {
  FF_GRID_KIND_OCCUPANCY = 0,
  FF_GRID_KIND_SDF = 1,
} FfGridKind;

/**
 * Opaque voxel grid.
 */
typedef struct FfGrid FfGrid;

/**
 * Opaque 32-bit SIREN.
 */
typedef struct FfNet FfNet;

/**
 * Normalization box of a trained field.
 */
typedef struct FfBounds {
  double spatial_min[3];
  double spatial_max[3];
  double phi_min;
  double phi_max;
} FfBounds;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *ff_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ff_version(void);

/**
 * Reads a VGRID file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum FfStatus ff_grid_read(const char *path, struct FfGrid **out);

/**
 * Writes a VGRID file.
 *
 * # Safety
 * `grid` must come from this library; `path` must be NUL-terminated.
 */
enum FfStatus ff_grid_write(const struct FfGrid *grid, const char *path);

/**
 * Builds an occupancy grid from `nx·ny·nz` bytes (x fastest, values 0 or 1).
 *
 * # Safety
 * `dims` and `voxel_size` point to 3 values; `data` holds `len` bytes.
 */
enum FfStatus ff_grid_new_occupancy(const size_t *dims,
                                    const double *voxel_size,
                                    const uint8_t *data,
                                    size_t len,
                                    struct FfGrid **out);

/**
 * # Safety
 * `grid` must come from this library or be null; it is invalid afterwards.
 */
void ff_grid_free(struct FfGrid *grid);

/**
 * # Safety
 * `out_dims` points to 3 writable values.
 */
enum FfStatus ff_grid_dims(const struct FfGrid *grid, size_t *out_dims);

/**
 * # Safety
 * `out` must be writable.
 */
enum FfStatus ff_grid_kind(const struct FfGrid *grid, enum FfGridKind *out);

/**
 * Copies every voxel value as f64; `len` must equal the voxel count.
 *
 * # Safety
 * `out` holds `len` writable values.
 */
enum FfStatus ff_grid_values(const struct FfGrid *grid, double *out, size_t len);

/**
 * Occupied voxels × voxel volume × density, in grams.
 *
 * # Safety
 * `out_grams` must be writable.
 */
enum FfStatus ff_digital_weight(const struct FfGrid *grid,
                                double density_g_per_cm3,
                                double *out_grams);

/**
 * Mean and population std of per-slice SSIM with the default Gaussian window.
 *
 * # Safety
 * Both grids come from this library; outputs are writable.
 */
enum FfStatus ff_ssim_volume(const struct FfGrid *a,
                             const struct FfGrid *b,
                             double *out_mean,
                             double *out_std);

/**
 * Mean absolute voxel difference.
 *
 * # Safety
 * Both grids come from this library; `out` is writable.
 */
enum FfStatus ff_l1_norm(const struct FfGrid *a, const struct FfGrid *b, double *out);

/**
 * Loads a checkpoint as a 32-bit network.
 *
 * # Safety
 * `path` is NUL-terminated; `out` is writable.
 */
enum FfStatus ff_net_read(const char *path, struct FfNet **out);

/**
 * # Safety
 * `net` must come from this library or be null; it is invalid afterwards.
 */
void ff_net_free(struct FfNet *net);

/**
 * Evaluates `n` normalized `(x, y, z, φ)` rows stored row-major in `points`.
 *
 * # Safety
 * `points` holds `4·n` values and `out` holds `n` writable values.
 */
enum FfStatus ff_net_forward(const struct FfNet *net, const float *points, size_t n, float *out);

/**
 * Thresholded reconstruction at flow rate `phi` on a `dims` lattice spanning
 * `bounds`.
 *
 * # Safety
 * `bounds` and `out` are valid; `dims` points to 3 values.
 */
enum FfStatus ff_reconstruct(const struct FfNet *net,
                             const struct FfBounds *bounds,
                             double phi,
                             const size_t *dims,
                             struct FfGrid **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIELDFORGE_H */
