#ifndef GRASPFORGE_H
#define GRASPFORGE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum GfStatus {
  GfStatus_Ok = 0,
  /**
   * A pointer argument was null.
   */
  GfStatus_NullPointer = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  GfStatus_InvalidUtf8 = 2,
  /**
   * Bad parameter value (unknown template, out-of-range index, ...).
   */
  GfStatus_InvalidArgument = 3,
  /**
   * Input failed schema or dimension validation.
   */
  GfStatus_SchemaError = 4,
  /**
   * Numeric failure inside a solver or integrator.
   */
  GfStatus_NumericError = 5,
  /**
   * Filesystem or serialization failure.
   */
  GfStatus_IoError = 6,
  /**
   * Every anchor is frozen; the scene admits no contact force.
   */
  GfStatus_AllAnchorsFrozen = 7,
} GfStatus;

/**
 * Opaque synthetic grasp scenario: hand pose, object mesh and pose,
 * gravity, camera.
 */
typedef struct GfScenario GfScenario;

/**
 * Opaque pseudo-force solve result.
 */
typedef struct GfSolveReport GfSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the most recent error on this thread into
 * `buf` (NUL-terminated, truncated to `cap`). Returns the full
 * message length, or 0 when no error has occurred.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes, or be null (query mode).
 */
uintptr_t gf_last_error_message(char *buf, uintptr_t cap);

/**
 * Builds a canonical scenario from a template name (`pinch-sphere`,
 * `tripod-sphere`, `wrap-cylinder`, `palm-box`, `hover-no-contact`).
 *
 * # Safety
 * `template` must be a NUL-terminated string; `out` must be a valid
 * pointer. On success `*out` owns the scenario; release it with
 * `gf_scenario_free`.
 */
enum GfStatus gf_scenario_build(const char *template_, uint64_t seed, struct GfScenario **out);

/**
 * Releases a scenario. Null is a no-op.
 *
 * # Safety
 * `scenario` must come from `gf_scenario_build` and not be freed twice.
 */
void gf_scenario_free(struct GfScenario *scenario);

/**
 * Writes the 21 ground-truth hand keypoints as 63 doubles (x, y, z
 * per keypoint, camera frame, meters).
 *
 * # Safety
 * `out` must point to at least 63 writable doubles.
 */
enum GfStatus gf_scenario_hand_keypoints(const struct GfScenario *scenario, double *out);

/**
 * Number of hand keypoints written by `gf_scenario_hand_keypoints`.
 */
uintptr_t gf_num_keypoints(void);

/**
 * Runs the two-phase pseudo-force solver with paper defaults on the
 * scenario's ground-truth pose.
 *
 * # Safety
 * `scenario` must be valid; `out` must be a valid pointer. On success
 * `*out` owns the report; release it with `gf_solve_report_free`.
 */
enum GfStatus gf_solve_forces(const struct GfScenario *scenario, struct GfSolveReport **out);

/**
 * Releases a solve report. Null is a no-op.
 *
 * # Safety
 * `report` must come from `gf_solve_forces` and not be freed twice.
 */
void gf_solve_report_free(struct GfSolveReport *report);

/**
 * Final residuals of a solve: force, torque, contact, contact2. Any
 * output pointer may be null to skip that value.
 *
 * # Safety
 * Non-null output pointers must be writable.
 */
enum GfStatus gf_solve_report_residuals(const struct GfSolveReport *report,
                                        double *force,
                                        double *torque,
                                        double *contact,
                                        double *contact2);

/**
 * Number of anchors in the report's force field.
 *
 * # Safety
 * `report` must be valid.
 */
uintptr_t gf_solve_report_force_count(const struct GfSolveReport *report);

/**
 * Anchor position and world-frame force at `index`.
 *
 * # Safety
 * `position` and `force` must each point to 3 writable doubles.
 */
enum GfStatus gf_solve_report_force(const struct GfSolveReport *report,
                                    uintptr_t index,
                                    double *position,
                                    double *force);

/**
 * Contact likelihood Omega of a signed distance in meters (default
 * smooth-bump form, centimeter argument scaling).
 */
double gf_omega(double distance_m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRASPFORGE_H */
