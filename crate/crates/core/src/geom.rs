//! Rotation representations, rigid/similarity transforms and pinhole projection.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Axis-angle rotation (radians times unit axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationAA(pub Vec3);

impl RotationAA {
    pub fn identity() -> Self {
        RotationAA(Vec3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Wraps the magnitude into [0, pi] by flipping the axis.
    pub fn canonicalized(&self) -> Self {
        let angle = self.0.norm();
        if angle < 1e-300 {
            return RotationAA(Vec3::zeros());
        }
        let axis = self.0 / angle;
        // wrap into (-pi, pi]
        let mut a = angle.rem_euclid(2.0 * std::f64::consts::PI);
        if a > std::f64::consts::PI {
            a -= 2.0 * std::f64::consts::PI;
        }
        if a < 0.0 {
            RotationAA(-axis * a.abs())
        } else {
            RotationAA(axis * a)
        }
    }
}

/// First two columns of a rotation matrix, not yet orthonormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D {
    pub col1: Vec3,
    pub col2: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if self.cx < 0.0
            || self.cy < 0.0
            || self.cx >= self.width as f64
            || self.cy >= self.height as f64
        {
            return Err(Error::InvalidParameter("principal point outside image".into()));
        }
        Ok(())
    }
}

/// Rodrigues conversion; the zero vector maps to the identity.
pub fn aa_to_matrix(r: RotationAA) -> Mat3 {
    Rotation3::new(r.0).into_inner()
}

/// Inverse of [`aa_to_matrix`]; the result is canonical (magnitude in [0, pi]).
pub fn matrix_to_aa(m: &Mat3) -> RotationAA {
    let rot = Rotation3::from_matrix(m);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    RotationAA(q.scaled_axis()).canonicalized()
}

/// Gram-Schmidt orthonormalization of the 6D rotation representation.
pub fn rot6d_to_matrix(r: Rotation6D) -> Result<Mat3> {
    let n1 = r.col1.norm();
    if n1 < 1e-12 {
        return Err(Error::DegenerateRotation);
    }
    let b1 = r.col1 / n1;
    let proj = r.col2 - b1 * b1.dot(&r.col2);
    let n2 = proj.norm();
    if n2 < 1e-9 * r.col2.norm().max(1.0) {
        return Err(Error::DegenerateRotation);
    }
    let b2 = proj / n2;
    let b3 = b1.cross(&b2);
    Ok(Mat3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d(m: &Mat3) -> Rotation6D {
    Rotation6D {
        col1: m.column(0).into(),
        col2: m.column(1).into(),
    }
}

/// Projects a camera-frame point onto the image plane.
pub fn project_pinhole(p: Vec3, k: &CameraIntrinsics) -> Result<(f64, f64)> {
    if p.z <= 1e-6 {
        return Err(Error::BehindCamera { z: p.z });
    }
    let u = k.fx * p.x / p.z + k.cx;
    let v = k.fy * p.y / p.z + k.cy;
    Ok((u, v))
}

/// Back-projects a pixel at a known depth into the camera frame.
pub fn unproject_pinhole(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth)
}

/// Similarity transform `p -> scale * R * p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * self.rotation * p + self.translation
    }
}

/// Least-squares alignment of `source` onto `target` (Umeyama).
///
/// With `with_scale = false` the returned scale is fixed at 1 (Kabsch).
pub fn procrustes_align(
    source: &[Vec3],
    target: &[Vec3],
    with_scale: bool,
) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: source.len(),
            got: target.len(),
        });
    }
    let n = source.len();
    if n < 3 {
        return Err(Error::DegenerateConfiguration(
            "need at least 3 correspondences".into(),
        ));
    }
    let mu_s: Vec3 = source.iter().sum::<Vec3>() / n as f64;
    let mu_t: Vec3 = target.iter().sum::<Vec3>() / n as f64;

    let mut cov = Mat3::zeros();
    let mut var_s = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_s;
        let dt = t - mu_t;
        cov += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    cov /= n as f64;
    var_s /= n as f64;
    if var_s < 1e-24 {
        return Err(Error::DegenerateConfiguration("source points coincide".into()));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::DegenerateConfiguration("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::DegenerateConfiguration("svd failed".into()))?;
    // collinear sets leave the smallest singular value at zero with an
    // ambiguous rotation
    if svd.singular_values[1] < 1e-12 * svd.singular_values[0].max(1e-300) {
        return Err(Error::DegenerateConfiguration("points are collinear".into()));
    }
    let mut s_diag = Vec3::new(1.0, 1.0, 1.0);
    if (u.determinant() * vt.determinant()) < 0.0 {
        s_diag.z = -1.0;
    }
    let rotation = u * Mat3::from_diagonal(&s_diag) * vt;
    let scale = if with_scale {
        (svd.singular_values.component_mul(&s_diag)).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_t - scale * rotation * mu_s;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// Sum of squared residuals of `transform` applied to `source` against `target`.
pub fn alignment_residual(
    transform: &SimilarityTransform,
    source: &[Vec3],
    target: &[Vec3],
) -> f64 {
    source
        .iter()
        .zip(target)
        .map(|(s, t)| (transform.apply(s) - t).norm_squared())
        .sum()
}
