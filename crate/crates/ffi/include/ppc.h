#ifndef PPC_H
#define PPC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PpcStatus {
  PPC_STATUS_OK = 0,
  PPC_STATUS_NULL_POINTER = 1,
  PPC_STATUS_INVALID_ARGUMENT = 2,
  PPC_STATUS_BEHIND_CAMERA = 3,
  PPC_STATUS_DEGENERATE_POSE = 4,
  PPC_STATUS_PARSE = 5,
  PPC_STATUS_IO = 6,
  PPC_STATUS_CRITIC = 7,
  PPC_STATUS_CONFIG = 8,
  PPC_STATUS_INTERNAL = 9,
  PPC_STATUS_PANIC = 10,
} PpcStatus;

typedef enum PpcPerturbation {
  PPC_PERTURBATION_ROTATION = 0,
  PPC_PERTURBATION_LATERAL = 1,
  PPC_PERTURBATION_DEPTH = 2,
} PpcPerturbation;

typedef struct PpcMesh PpcMesh;

typedef struct PpcRefiner PpcRefiner;

typedef struct PpcSampler PpcSampler;

typedef struct PpcIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} PpcIntrinsics;

typedef struct PpcPose {
  double rotation[9];
  double translation[3];
} PpcPose;

/**
 * Metric values and acceptance flags (1 accepted, 0 rejected) in the
 * order add, adds, add(-s), reproj, reproj-s, 5cm5deg, 5cm5deg-s.
 * The value of the two 5cm5deg entries is the rotation error in degrees.
 */
typedef struct PpcMetrics {
  double values[7];
  uint8_t accepted[7];
} PpcMetrics;

/**
 * Image critic callback. `observed` and `rendered` are `resolution`²
 * interleaved RGB floats in [0, 1]. Write the score to `out_value` and
 * return 0; any other return value aborts the refinement. The callback is
 * called from several threads at once.
 */
typedef int32_t (*PpcCriticFn)(void *user_data,
                               const float *observed,
                               const float *rendered,
                               size_t resolution,
                               double *out_value);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (always
 * NUL-terminated when `len > 0`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ppc_last_error_message(char *buf, size_t len);

/**
 * Rotation matrix of an axis-angle vector (radians).
 *
 * # Safety
 * `axis_angle` points to 3 doubles, `out_rotation` to 9.
 */
enum PpcStatus ppc_so3_exp(const double *axis_angle, double *out_rotation);

/**
 * Axis-angle vector of a rotation matrix.
 *
 * # Safety
 * `rotation` points to 9 doubles, `out_axis_angle` to 3.
 */
enum PpcStatus ppc_so3_log(const double *rotation, double *out_axis_angle);

/**
 * Loads a mesh from a builtin name (`"builtin:cube"` or `"cube"`) or a
 * mesh file path.
 *
 * # Safety
 * `source` is a NUL-terminated string; `out` is writable.
 */
enum PpcStatus ppc_mesh_load(const char *source, struct PpcMesh **out);

/**
 * # Safety
 * `mesh` is null or a handle from [`ppc_mesh_load`] not yet freed.
 */
void ppc_mesh_free(struct PpcMesh *mesh);

/**
 * # Safety
 * `mesh` is a live handle; `out` is writable.
 */
enum PpcStatus ppc_mesh_diameter(const struct PpcMesh *mesh, double *out);

/**
 * Number of symmetry rotations including the identity.
 *
 * # Safety
 * `mesh` is a live handle; `out` is writable.
 */
enum PpcStatus ppc_mesh_symmetry_count(const struct PpcMesh *mesh, size_t *out);

/**
 * Mean patch-pixel distance between the mesh points placed by `estimate`
 * and by `truth`, in the zoomed patch of `estimate`.
 *
 * # Safety
 * All pointers are valid; `mesh` is a live handle.
 */
enum PpcStatus ppc_oracle_error(const struct PpcMesh *mesh,
                                const struct PpcIntrinsics *intrinsics,
                                const struct PpcPose *estimate,
                                const struct PpcPose *truth,
                                size_t patch_resolution,
                                double *out);

/**
 * Scores `estimate` against `truth` with the default thresholds.
 *
 * # Safety
 * All pointers are valid; `mesh` is a live handle.
 */
enum PpcStatus ppc_evaluate_pose(const struct PpcMesh *mesh,
                                 const struct PpcIntrinsics *intrinsics,
                                 const struct PpcPose *estimate,
                                 const struct PpcPose *truth,
                                 struct PpcMetrics *out);

/**
 * Moves a pose with negative depth in front of the camera while keeping
 * its projected center.
 *
 * # Safety
 * `pose` and `out` are valid.
 */
enum PpcStatus ppc_correct_negative_depth(const struct PpcPose *pose, struct PpcPose *out);

/**
 * Proposal sampler with default settings and the given seed.
 *
 * # Safety
 * `out` is writable.
 */
enum PpcStatus ppc_sampler_new(uint64_t seed, struct PpcSampler **out);

/**
 * # Safety
 * `sampler` is null or a live handle.
 */
void ppc_sampler_free(struct PpcSampler *sampler);

/**
 * Draws one perturbed proposal around `truth`. `out_kind` may be null.
 *
 * # Safety
 * `sampler` is a live handle; other pointers are valid.
 */
enum PpcStatus ppc_sampler_sample(struct PpcSampler *sampler,
                                  const struct PpcPose *truth,
                                  double diameter,
                                  struct PpcPose *out,
                                  enum PpcPerturbation *out_kind);

/**
 * Creates a refiner for `mesh` seen through `intrinsics`.
 *
 * `config_json` is a refinement config in JSON, or null for defaults.
 * With a null `critic` the oracle critic is used, which needs the ground
 * truth passed to [`ppc_refiner_run`].
 *
 * # Safety
 * `mesh` is a live handle; `config_json` is null or NUL-terminated;
 * `critic` must be safe to call concurrently with `user_data`.
 */
enum PpcStatus ppc_refiner_new(const struct PpcMesh *mesh,
                               const struct PpcIntrinsics *intrinsics,
                               const char *config_json,
                               PpcCriticFn critic,
                               void *user_data,
                               struct PpcRefiner **out);

/**
 * # Safety
 * `refiner` is null or a live handle.
 */
void ppc_refiner_free(struct PpcRefiner *refiner);

/**
 * Refines `proposal` against an RGB8 image of the camera's size (null for
 * a black image). `truth` may be null unless the oracle critic is used.
 * `out_objective` may be null.
 *
 * # Safety
 * `image_rgb8` is null or holds width·height·3 bytes; other pointers valid.
 */
enum PpcStatus ppc_refiner_run(const struct PpcRefiner *refiner,
                               const uint8_t *image_rgb8,
                               const struct PpcPose *proposal,
                               const struct PpcPose *truth,
                               struct PpcPose *out,
                               double *out_objective);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPC_H */
