//! C ABI for the grasp-physics core: opaque handles, integer status
//! codes, and a thread-local last-error message. The header is generated
//! into `include/graspforge.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::ptr;

use graspforge_core::error::Error;
use graspforge_core::force::Gravity;
use graspforge_core::hand::{forward_kinematics, HandModel, NUM_KEYPOINTS};
use graspforge_core::physics::contact_likelihood;
use graspforge_core::physics::OmegaConfig;
use graspforge_core::scenario::{build_canonical, Scenario, TemplateId};
use graspforge_core::solve::{solve_pseudo_forces, SolveReport, SolverConfig};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad parameter value (unknown template, out-of-range index, ...).
    InvalidArgument = 3,
    /// Input failed schema or dimension validation.
    SchemaError = 4,
    /// Numeric failure inside a solver or integrator.
    NumericError = 5,
    /// Filesystem or serialization failure.
    IoError = 6,
    /// Every anchor is frozen; the scene admits no contact force.
    AllAnchorsFrozen = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: GfStatus, msg: impl Into<String>) -> GfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn fail_err(e: &Error) -> GfStatus {
    let status = match e {
        Error::AllAnchorsFrozen => GfStatus::AllAnchorsFrozen,
        Error::Io(_) | Error::ParseError { .. } => GfStatus::IoError,
        Error::Json(_)
        | Error::SchemaError(_)
        | Error::VersionError { .. }
        | Error::DimensionMismatch { .. }
        | Error::BadChannel { .. } => GfStatus::SchemaError,
        Error::InvalidParameter(_) | Error::OutOfRange(_) | Error::UnknownTemplate(_) => {
            GfStatus::InvalidArgument
        }
        _ => GfStatus::NumericError,
    };
    fail(status, e.to_string())
}

/// Copies the message of the most recent error on this thread into
/// `buf` (NUL-terminated, truncated to `cap`). Returns the full
/// message length, or 0 when no error has occurred.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn gf_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Opaque synthetic grasp scenario: hand pose, object mesh and pose,
/// gravity, camera.
pub struct GfScenario {
    inner: Scenario,
    model: HandModel,
}

/// Opaque pseudo-force solve result.
pub struct GfSolveReport {
    inner: SolveReport,
}

/// Builds a canonical scenario from a template name (`pinch-sphere`,
/// `tripod-sphere`, `wrap-cylinder`, `palm-box`, `hover-no-contact`).
///
/// # Safety
/// `template` must be a NUL-terminated string; `out` must be a valid
/// pointer. On success `*out` owns the scenario; release it with
/// `gf_scenario_free`.
#[no_mangle]
pub unsafe extern "C" fn gf_scenario_build(
    template: *const c_char,
    seed: u64,
    out: *mut *mut GfScenario,
) -> GfStatus {
    if template.is_null() || out.is_null() {
        return fail(GfStatus::NullPointer, "null pointer argument");
    }
    let name = match CStr::from_ptr(template).to_str() {
        Ok(s) => s,
        Err(_) => return fail(GfStatus::InvalidUtf8, "template name is not UTF-8"),
    };
    let id: TemplateId = match name.parse() {
        Ok(id) => id,
        Err(e) => return fail_err(&e),
    };
    match build_canonical(id, seed) {
        Ok(scenario) => {
            let model = HandModel::new(scenario.hand_shape.clone());
            *out = Box::into_raw(Box::new(GfScenario {
                inner: scenario,
                model,
            }));
            GfStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Releases a scenario. Null is a no-op.
///
/// # Safety
/// `scenario` must come from `gf_scenario_build` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gf_scenario_free(scenario: *mut GfScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Writes the 21 ground-truth hand keypoints as 63 doubles (x, y, z
/// per keypoint, camera frame, meters).
///
/// # Safety
/// `out` must point to at least 63 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_scenario_hand_keypoints(
    scenario: *const GfScenario,
    out: *mut f64,
) -> GfStatus {
    if scenario.is_null() || out.is_null() {
        return fail(GfStatus::NullPointer, "null pointer argument");
    }
    let s = &*scenario;
    let kp = forward_kinematics(&s.inner.hand_pose, &s.model.shape);
    for (i, p) in kp.iter().enumerate() {
        *out.add(3 * i) = p.x;
        *out.add(3 * i + 1) = p.y;
        *out.add(3 * i + 2) = p.z;
    }
    GfStatus::Ok
}

/// Number of hand keypoints written by `gf_scenario_hand_keypoints`.
#[no_mangle]
pub extern "C" fn gf_num_keypoints() -> usize {
    NUM_KEYPOINTS
}

/// Runs the two-phase pseudo-force solver with paper defaults on the
/// scenario's ground-truth pose.
///
/// # Safety
/// `scenario` must be valid; `out` must be a valid pointer. On success
/// `*out` owns the report; release it with `gf_solve_report_free`.
#[no_mangle]
pub unsafe extern "C" fn gf_solve_forces(
    scenario: *const GfScenario,
    out: *mut *mut GfSolveReport,
) -> GfStatus {
    if scenario.is_null() || out.is_null() {
        return fail(GfStatus::NullPointer, "null pointer argument");
    }
    let s = &*scenario;
    let posed = s
        .inner
        .object_mesh
        .transformed(&s.inner.object_rotation, &s.inner.object_translation);
    let gravity = match Gravity::new(s.inner.gravity) {
        Ok(g) => g,
        Err(e) => return fail_err(&e),
    };
    match solve_pseudo_forces(
        &s.model,
        &s.inner.hand_pose,
        &posed,
        gravity,
        &SolverConfig::default(),
    ) {
        Ok(report) => {
            *out = Box::into_raw(Box::new(GfSolveReport { inner: report }));
            GfStatus::Ok
        }
        Err(e) => fail_err(&e),
    }
}

/// Releases a solve report. Null is a no-op.
///
/// # Safety
/// `report` must come from `gf_solve_forces` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gf_solve_report_free(report: *mut GfSolveReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Final residuals of a solve: force, torque, contact, contact2. Any
/// output pointer may be null to skip that value.
///
/// # Safety
/// Non-null output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gf_solve_report_residuals(
    report: *const GfSolveReport,
    force: *mut f64,
    torque: *mut f64,
    contact: *mut f64,
    contact2: *mut f64,
) -> GfStatus {
    if report.is_null() {
        return fail(GfStatus::NullPointer, "null report");
    }
    let r = &(*report).inner.residuals;
    for (ptr, value) in [
        (force, r.force),
        (torque, r.torque),
        (contact, r.contact),
        (contact2, r.contact2),
    ] {
        if !ptr.is_null() {
            *ptr = value;
        }
    }
    GfStatus::Ok
}

/// Number of anchors in the report's force field.
///
/// # Safety
/// `report` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_solve_report_force_count(report: *const GfSolveReport) -> usize {
    if report.is_null() {
        return 0;
    }
    (*report).inner.force_field.forces.len()
}

/// Anchor position and world-frame force at `index`.
///
/// # Safety
/// `position` and `force` must each point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gf_solve_report_force(
    report: *const GfSolveReport,
    index: usize,
    position: *mut f64,
    force: *mut f64,
) -> GfStatus {
    if report.is_null() || position.is_null() || force.is_null() {
        return fail(GfStatus::NullPointer, "null pointer argument");
    }
    let field = &(*report).inner.force_field;
    if index >= field.forces.len() {
        return fail(
            GfStatus::InvalidArgument,
            format!("force index {index} out of range {}", field.forces.len()),
        );
    }
    for (dst, src) in [(position, field.positions[index]), (force, field.forces[index])] {
        *dst.add(0) = src.x;
        *dst.add(1) = src.y;
        *dst.add(2) = src.z;
    }
    GfStatus::Ok
}

/// Contact likelihood Omega of a signed distance in meters (default
/// smooth-bump form, centimeter argument scaling).
#[no_mangle]
pub extern "C" fn gf_omega(distance_m: f64) -> f64 {
    contact_likelihood(distance_m, &OmegaConfig::default())
}
