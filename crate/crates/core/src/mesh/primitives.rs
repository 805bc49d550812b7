//! Watertight primitive meshes used as synthetic object models.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveKind {
    Sphere { radius: f64 },
    Box { x: f64, y: f64, z: f64 },
    Cylinder { radius: f64, height: f64 },
}

pub fn make_primitive(kind: PrimitiveKind, level: u32) -> Result<TriMesh> {
    match kind {
        PrimitiveKind::Sphere { radius } => make_sphere(radius, level),
        PrimitiveKind::Box { x, y, z } => make_box(x, y, z),
        PrimitiveKind::Cylinder { radius, height } => make_cylinder(radius, height, level),
    }
}

/// Axis-aligned box centered at the origin with the given extents.
pub fn make_box(x: f64, y: f64, z: f64) -> Result<TriMesh> {
    if x <= 0.0 || y <= 0.0 || z <= 0.0 {
        return Err(Error::InvalidDimensions(format!("box {x} x {y} x {z}")));
    }
    let (hx, hy, hz) = (x / 2.0, y / 2.0, z / 2.0);
    let mut vertices = Vec::with_capacity(8);
    for ix in [-1.0, 1.0] {
        for iy in [-1.0, 1.0] {
            for iz in [-1.0, 1.0] {
                vertices.push(Vec3::new(ix * hx, iy * hy, iz * hz));
            }
        }
    }
    // vertex index = ix*4 + iy*2 + iz with 0 = min, 1 = max
    let quads: [[usize; 4]; 6] = [
        [0, 1, 3, 2], // -x
        [4, 6, 7, 5], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 2, 6, 4], // -z
        [1, 5, 7, 3], // +z
    ];
    let mut faces = Vec::with_capacity(12);
    for q in quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    TriMesh::new(vertices, faces)
}

/// Icosphere: subdivided icosahedron projected onto the sphere. Level L
/// gives 80 * 4^L faces (level 3: 5120, level 4: 20480); level 4 keeps
/// the chordal deviation from the analytic sphere under 1e-3 * radius.
pub fn make_sphere(radius: f64, level: u32) -> Result<TriMesh> {
    if radius <= 0.0 {
        return Err(Error::InvalidDimensions(format!("sphere radius {radius}")));
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..=level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let m = ((vertices[a] + vertices[b]) * 0.5).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }
    let vertices = vertices.into_iter().map(|v| v * radius).collect();
    TriMesh::new(vertices, faces)
}

/// Closed cylinder with its axis along +z, centered at the origin.
/// `level` controls the radial segment count (`8 * 2^level`).
pub fn make_cylinder(radius: f64, height: f64, level: u32) -> Result<TriMesh> {
    if radius <= 0.0 || height <= 0.0 {
        return Err(Error::InvalidDimensions(format!(
            "cylinder r {radius}, h {height}"
        )));
    }
    let n = 8usize << level.min(8);
    let hz = height / 2.0;
    let mut vertices = Vec::with_capacity(2 * n + 2);
    for &z in &[-hz, hz] {
        for i in 0..n {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            vertices.push(Vec3::new(radius * a.cos(), radius * a.sin(), z));
        }
    }
    let bottom_center = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, -hz));
    let top_center = vertices.len();
    vertices.push(Vec3::new(0.0, 0.0, hz));

    let mut faces = Vec::with_capacity(4 * n);
    for i in 0..n {
        let j = (i + 1) % n;
        // side quad, outward-oriented
        faces.push([i, j, n + j]);
        faces.push([i, n + j, n + i]);
        // caps
        faces.push([bottom_center, j, i]);
        faces.push([top_center, n + i, n + j]);
    }
    TriMesh::new(vertices, faces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_area_close_to_analytic() {
        let r = 0.05;
        let mesh = make_sphere(r, 3).unwrap();
        let area = mesh.surface_area();
        let exact = 4.0 * std::f64::consts::PI * r * r;
        assert!((area - exact).abs() / exact < 0.01, "area {area} vs {exact}");
    }

    #[test]
    fn sphere_volume_positive_and_watertight_orientation() {
        let mesh = make_sphere(1.0, 2).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((mesh.volume() - exact).abs() / exact < 0.05);
    }

    #[test]
    fn cylinder_vertices_on_implicit_surface() {
        let (r, h) = (0.03, 0.1);
        let mesh = make_cylinder(r, h, 2).unwrap();
        for v in mesh.vertices() {
            let radial = (v.x * v.x + v.y * v.y).sqrt();
            let on_side = (radial - r).abs() < 1e-12 && v.z.abs() <= h / 2.0 + 1e-12;
            let on_cap = v.z.abs() == h / 2.0 && radial <= r + 1e-12;
            let center = radial < 1e-12;
            assert!(on_side || on_cap || center, "vertex off surface: {v:?}");
        }
        let exact = std::f64::consts::PI * r * r * h;
        assert!((mesh.volume() - exact).abs() / exact < 0.02);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(make_box(0.0, 1.0, 1.0).is_err());
        assert!(make_sphere(-1.0, 2).is_err());
        assert!(make_cylinder(0.1, 0.0, 2).is_err());
    }
}
