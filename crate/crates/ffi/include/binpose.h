#ifndef BINPOSE_H
#define BINPOSE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum BpStatus {
  BP_STATUS_OK = 0,
  BP_STATUS_NULL_POINTER = 1,
  BP_STATUS_INVALID_ARGUMENT = 2,
  BP_STATUS_IO = 3,
  BP_STATUS_FORMAT = 4,
  BP_STATUS_FIT_FAILED = 5,
  BP_STATUS_NO_CORRESPONDENCE = 6,
  BP_STATUS_PANIC = 7,
} BpStatus;

// Opaque result of the analytic fitter.
typedef struct BpFitReport BpFitReport;

// Opaque organized scan.
typedef struct BpScan BpScan;

// Cuboid bin, all values in millimeters.
typedef struct BpBinSpec {
  double inner_length;
  double inner_width;
  double inner_depth;
  double wall_thickness;
} BpBinSpec;

// Bin-to-scanner transform. `rotation` is row-major.
typedef struct BpPose {
  double rotation[9];
  double translation[3];
} BpPose;

// ICP outcome with default parameters.
typedef struct BpIcpOutcome {
  struct BpPose pose;
  uintptr_t iterations_used;
  double final_mean_distance;
  uintptr_t paired_points;
  bool confident;
} BpIcpOutcome;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static description of a status code.
const char *bp_status_message(enum BpStatus status);

// Builds a scan from `width * height * 3` floats in row-major pixel order.
// Pixels holding any NaN are invalid.
//
// # Safety
// `points` must point to `width * height * 3` readable floats and `out`
// must be writable.
enum BpStatus bp_scan_new(uintptr_t width,
                          uintptr_t height,
                          const float *points,
                          struct BpScan **out);

// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum BpStatus bp_scan_load(const char *path, struct BpScan **out);

// # Safety
// `scan` must come from this library and `path` be NUL-terminated.
enum BpStatus bp_scan_save(const struct BpScan *scan, const char *path);

// # Safety
// `scan` must be null or a live handle; `width`, `height` and
// `valid_count` must be writable.
enum BpStatus bp_scan_info(const struct BpScan *scan,
                           uintptr_t *width,
                           uintptr_t *height,
                           uintptr_t *valid_count);

// # Safety
// `scan` must be null or a handle not freed before.
void bp_scan_free(struct BpScan *scan);

// Runs the analytic fitter with default parameters. A failed fit is still
// [`BpStatus::Ok`]; query it with [`bp_fit_report_pose`].
//
// # Safety
// `scan` must be live, `bin` readable and `out` writable.
enum BpStatus bp_fit_analytic(const struct BpScan *scan,
                              const struct BpBinSpec *bin,
                              struct BpFitReport **out);

// Writes the fitted pose, or returns [`BpStatus::FitFailed`].
//
// # Safety
// `report` must be live and `out` writable.
enum BpStatus bp_fit_report_pose(const struct BpFitReport *report, struct BpPose *out);

// # Safety
// `report` must be null or a handle not freed before.
void bp_fit_report_free(struct BpFitReport *report);

// ICP refinement with default parameters. On
// [`BpStatus::NoCorrespondence`] the caller should keep its initial pose.
//
// # Safety
// `scan` must be live, `bin` and `initial` readable and `out` writable.
enum BpStatus bp_refine_icp(const struct BpScan *scan,
                            const struct BpBinSpec *bin,
                            const struct BpPose *initial,
                            struct BpIcpOutcome *out);

// Translation error (mm) and symmetry-aware rotation error (rad).
//
// # Safety
// `gt` and `est` must be readable, `e_te` and `e_re` writable.
enum BpStatus bp_pose_errors(const struct BpPose *gt,
                             const struct BpPose *est,
                             double *e_te,
                             double *e_re);

// Identity pose, handy for initializing output values.
struct BpPose bp_pose_identity(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINPOSE_H */
