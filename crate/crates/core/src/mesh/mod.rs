//! Triangle meshes, signed-distance queries, object keypoints and OBJ I/O.

mod obj;
mod primitives;
pub mod sdf;

pub use obj::{load_obj, save_obj};
pub use primitives::{make_box, make_cylinder, make_primitive, make_sphere, PrimitiveKind};
pub use sdf::{SdfQuery, SdfResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Indexed triangle mesh. Primitive generators produce watertight,
/// outward-oriented meshes; sign queries rely on that.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    faces: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        for (i, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::SchemaError(format!(
                        "face {i} references vertex {v} out of {}",
                        vertices.len()
                    )));
                }
            }
            let area = triangle_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if area < 1e-16 {
                return Err(Error::DegenerateTriangle { face: i, area });
            }
        }
        Ok(TriMesh { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn transformed(&self, rotation: &crate::geom::Mat3, translation: &Vec3) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation * v + translation)
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Signed volume by the divergence theorem. Positive for watertight
    /// outward-oriented meshes.
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Volumetric centroid, the default torque origin.
    pub fn centroid(&self) -> Vec3 {
        let mut num = Vec3::zeros();
        let mut den = 0.0;
        for f in &self.faces {
            let [a, b, c] = [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]];
            let v = a.dot(&b.cross(&c)) / 6.0;
            num += v * (a + b + c) / 4.0;
            den += v;
        }
        if den.abs() < 1e-18 {
            // fall back to the vertex mean for near-zero-volume meshes
            return self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64;
        }
        num / den
    }

    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| triangle_area(&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]))
            .sum()
    }
}

pub(crate) fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// The 27 object keypoints in fixed order: center, 8 corners, 12 edge
/// midpoints, 6 face midpoints, all derived from the object-frame AABB.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectKeypoints27(pub [Vec3; 27]);

pub fn bbox_keypoints_27(mesh: &TriMesh) -> ObjectKeypoints27 {
    let (lo, hi) = mesh.aabb();
    bbox_keypoints_27_from_aabb(lo, hi)
}

pub fn bbox_keypoints_27_from_aabb(lo: Vec3, hi: Vec3) -> ObjectKeypoints27 {
    let mut pts = [Vec3::zeros(); 27];
    let mut idx = 0;
    pts[idx] = (lo + hi) * 0.5;
    idx += 1;
    let corner = |ix: usize, iy: usize, iz: usize| {
        Vec3::new(
            if ix == 0 { lo.x } else { hi.x },
            if iy == 0 { lo.y } else { hi.y },
            if iz == 0 { lo.z } else { hi.z },
        )
    };
    // corners in binary (x, y, z) order
    for ix in 0..2 {
        for iy in 0..2 {
            for iz in 0..2 {
                pts[idx] = corner(ix, iy, iz);
                idx += 1;
            }
        }
    }
    // edge midpoints: axis-by-axis, the other two coordinates in binary order
    for axis in 0..3 {
        for a in 0..2 {
            for b in 0..2 {
                let (c0, c1) = match axis {
                    0 => (corner(0, a, b), corner(1, a, b)),
                    1 => (corner(a, 0, b), corner(a, 1, b)),
                    _ => (corner(a, b, 0), corner(a, b, 1)),
                };
                pts[idx] = (c0 + c1) * 0.5;
                idx += 1;
            }
        }
    }
    // face midpoints: -x, +x, -y, +y, -z, +z
    let center = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    for (axis, sign) in [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)] {
        let mut p = center;
        p[axis] += sign * half[axis];
        pts[idx] = p;
        idx += 1;
    }
    debug_assert_eq!(idx, 27);
    ObjectKeypoints27(pts)
}

/// The 8 AABB corners (indices 1..=8 of the 27-keypoint layout).
pub fn bbox_corners(mesh: &TriMesh) -> [Vec3; 8] {
    let kp = bbox_keypoints_27(mesh);
    let mut out = [Vec3::zeros(); 8];
    out.copy_from_slice(&kp.0[1..9]);
    out
}
