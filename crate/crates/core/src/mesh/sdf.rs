//! Signed-distance queries against a triangle mesh.
//!
//! Sign is decided by angle-weighted pseudo-normals on the closest
//! feature (face, edge or vertex), which stays well defined when the
//! closest point lands on an edge or vertex. Queries go through an
//! axis-aligned BVH; an exact brute-force path is kept for oracle tests.

use std::collections::HashMap;

use crate::geom::Vec3;

use super::TriMesh;

/// Result of a signed-distance query. Distance is negative inside.
#[derive(Debug, Clone, Copy)]
pub struct SdfResult {
    pub distance: f64,
    pub closest_point: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, other: &Aabb) {
        self.lo = self.lo.inf(&other.lo);
        self.hi = self.hi.sup(&other.hi);
    }

    fn dist_sq(&self, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

#[derive(Debug)]
enum BvhNode {
    Leaf {
        bounds: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl BvhNode {
    fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Inner { bounds, .. } => bounds,
        }
    }
}

/// Immutable acceleration structure over one mesh.
pub struct SdfQuery {
    tris: Vec<[Vec3; 3]>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
    edge_normals: HashMap<(usize, usize), Vec3>,
    faces: Vec<[usize; 3]>,
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 8;

impl SdfQuery {
    pub fn new(mesh: &TriMesh) -> Self {
        let faces: Vec<[usize; 3]> = mesh.faces().to_vec();
        let tris: Vec<[Vec3; 3]> = (0..faces.len()).map(|i| mesh.triangle(i)).collect();
        let face_normals: Vec<Vec3> = tris
            .iter()
            .map(|t| (t[1] - t[0]).cross(&(t[2] - t[0])).normalize())
            .collect();

        let mut vertex_normals = vec![Vec3::zeros(); mesh.vertices().len()];
        let mut edge_normals: HashMap<(usize, usize), Vec3> = HashMap::new();
        for (f, face) in faces.iter().enumerate() {
            let n = face_normals[f];
            for e in 0..3 {
                let (a, b) = (face[e], face[(e + 1) % 3]);
                *edge_normals.entry((a.min(b), a.max(b))).or_insert(Vec3::zeros()) += n;
                // incident angle at vertex a
                let pa = mesh.vertices()[a];
                let pb = mesh.vertices()[b];
                let pc = mesh.vertices()[face[(e + 2) % 3]];
                let u = (pb - pa).normalize();
                let v = (pc - pa).normalize();
                let angle = u.dot(&v).clamp(-1.0, 1.0).acos();
                vertex_normals[a] += angle * n;
            }
        }

        // BVH over triangle indices
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let centroids: Vec<Vec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut nodes = Vec::new();
        build_bvh(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);

        SdfQuery {
            tris,
            face_normals,
            vertex_normals,
            edge_normals,
            faces,
            nodes,
            order,
        }
    }

    /// BVH-accelerated signed-distance query.
    pub fn signed_distance(&self, p: &Vec3) -> SdfResult {
        let mut best = f64::INFINITY;
        let mut best_tri = 0usize;
        let mut best_point = Vec3::zeros();
        let mut best_bary = (0.0, 0.0, 0.0);
        let mut stack = vec![self.nodes.len() - 1];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if node.bounds().dist_sq(p) >= best {
                continue;
            }
            match node {
                BvhNode::Leaf { start, count, .. } => {
                    for &t in &self.order[*start..*start + *count] {
                        let tri = &self.tris[t];
                        let (cp, bary) = closest_point_triangle(p, &tri[0], &tri[1], &tri[2]);
                        let d2 = (p - cp).norm_squared();
                        if d2 < best {
                            best = d2;
                            best_tri = t;
                            best_point = cp;
                            best_bary = bary;
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    // descend into the closer child first
                    let dl = self.nodes[*left].bounds().dist_sq(p);
                    let dr = self.nodes[*right].bounds().dist_sq(p);
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        self.finish(p, best_tri, best_point, best_bary)
    }

    /// Exact brute-force query over every triangle (oracle path).
    pub fn signed_distance_brute(&self, p: &Vec3) -> SdfResult {
        let mut best = f64::INFINITY;
        let mut best_tri = 0usize;
        let mut best_point = Vec3::zeros();
        let mut best_bary = (0.0, 0.0, 0.0);
        for (t, tri) in self.tris.iter().enumerate() {
            let (cp, bary) = closest_point_triangle(p, &tri[0], &tri[1], &tri[2]);
            let d2 = (p - cp).norm_squared();
            if d2 < best {
                best = d2;
                best_tri = t;
                best_point = cp;
                best_bary = bary;
            }
        }
        self.finish(p, best_tri, best_point, best_bary)
    }

    fn finish(&self, p: &Vec3, tri: usize, cp: Vec3, bary: (f64, f64, f64)) -> SdfResult {
        let pseudo = self.pseudo_normal(tri, bary);
        let delta = p - cp;
        let dist = delta.norm();
        let sign = if delta.dot(&pseudo) >= 0.0 { 1.0 } else { -1.0 };
        SdfResult {
            distance: sign * dist,
            closest_point: cp,
            normal: pseudo.normalize(),
        }
    }

    fn pseudo_normal(&self, tri: usize, (u, v, w): (f64, f64, f64)) -> Vec3 {
        const TOL: f64 = 1e-9;
        let face = self.faces[tri];
        let zero = [u < TOL, v < TOL, w < TOL];
        match zero.iter().filter(|z| **z).count() {
            0 => self.face_normals[tri],
            1 => {
                // closest point on the edge opposite the zero coordinate
                let (a, b) = if zero[0] {
                    (face[1], face[2])
                } else if zero[1] {
                    (face[0], face[2])
                } else {
                    (face[0], face[1])
                };
                self.edge_normals[&(a.min(b), a.max(b))]
            }
            _ => {
                let vi = if !zero[0] {
                    face[0]
                } else if !zero[1] {
                    face[1]
                } else {
                    face[2]
                };
                self.vertex_normals[vi]
            }
        }
    }
}

fn build_bvh(
    tris: &[[Vec3; 3]],
    centroids: &[Vec3],
    order: &mut [usize],
    start: usize,
    count: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut bounds = Aabb::empty();
    // order is the full permutation slice; work on [start, start+count)
    let slice: Vec<usize> = order[start..start + count].to_vec();
    for &t in &slice {
        for p in &tris[t] {
            bounds.grow(p);
        }
    }
    if count <= LEAF_SIZE {
        nodes.push(BvhNode::Leaf {
            bounds,
            start,
            count,
        });
        return nodes.len() - 1;
    }
    let mut cb = Aabb::empty();
    for &t in &slice {
        cb.grow(&centroids[t]);
    }
    let extent = cb.hi - cb.lo;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let seg = &mut order[start..start + count];
    seg.sort_by(|&a, &b| {
        centroids[a][axis]
            .partial_cmp(&centroids[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let half = count / 2;
    let left = build_bvh(tris, centroids, order, start, half, nodes);
    let right = build_bvh(tris, centroids, order, start + half, count - half, nodes);
    let mut merged = *nodes[left].bounds();
    merged.merge(nodes[right].bounds());
    nodes.push(BvhNode::Inner {
        bounds: merged,
        left,
        right,
    });
    nodes.len() - 1
}

/// Closest point on a triangle and its barycentric coordinates (u, v, w)
/// with respect to (a, b, c).
pub fn closest_point_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, (f64, f64, f64)) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, (1.0, 0.0, 0.0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, (0.0, 1.0, 0.0));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let t = d1 / (d1 - d3);
        return (a + ab * t, (1.0 - t, t, 0.0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, (0.0, 0.0, 1.0));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let t = d2 / (d2 - d6);
        return (a + ac * t, (1.0 - t, 0.0, t));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * t, (0.0, 1.0 - t, t));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, (1.0 - v - w, v, w))
}

/// Convenience wrapper building a one-shot query.
pub fn signed_distance(mesh: &TriMesh, p: &Vec3) -> SdfResult {
    SdfQuery::new(mesh).signed_distance(p)
}
