//! Simplified parametric hand: kinematic tree, forward kinematics to 21
//! keypoints, linear-blend-skinned capsule surface, 32 anchor points with
//! local contact frames, and the four-level joint hierarchy.
//!
//! This is a deterministic stand-in, not MANO: 16 joints in MANO ordering
//! (wrist, index, middle, pinky, ring, thumb) plus 5 fingertips. The rest
//! skeleton and anchor table ship as versioned JSON assets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{AnchorFrame, NUM_ANCHORS};
use crate::geom::{aa_to_matrix, Mat3, RotationAA, Vec3};
use crate::mesh::TriMesh;

pub const NUM_JOINTS: usize = 16;
pub const NUM_KEYPOINTS: usize = 21;
pub const NUM_FINGERS: usize = 5;
/// Bones: 5 palm bones (wrist to each MCP) + 3 phalanges per finger.
pub const NUM_BONES: usize = 20;

const REST_SKELETON_JSON: &str = include_str!("../assets/rest_skeleton.json");
const ANCHOR_TABLE_JSON: &str = include_str!("../assets/anchor_table.json");

#[derive(Debug, Clone, Deserialize)]
struct SkeletonJointSpec {
    name: String,
    parent: i32,
    finger: Option<usize>,
    offset: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
struct SkeletonSpec {
    version: u32,
    joints: Vec<SkeletonJointSpec>,
    tips: Vec<SkeletonJointSpec>,
}

fn skeleton_spec() -> &'static SkeletonSpec {
    use std::sync::OnceLock;
    static SPEC: OnceLock<SkeletonSpec> = OnceLock::new();
    SPEC.get_or_init(|| {
        let spec: SkeletonSpec =
            serde_json::from_str(REST_SKELETON_JSON).expect("embedded rest skeleton parses");
        assert_eq!(spec.version, 1);
        assert_eq!(spec.joints.len(), NUM_JOINTS);
        assert_eq!(spec.tips.len(), NUM_FINGERS);
        spec
    })
}

/// MANO-style shape parameters. `beta[0]` is a global scale offset,
/// `beta[1..=5]` are per-finger length multipliers (index, middle, pinky,
/// ring, thumb), each mapped through `1 + 0.1 tanh(beta_i)`;
/// `beta[6..]` are unused.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HandShape {
    pub beta: [f64; 10],
}

impl Default for HandShape {
    fn default() -> Self {
        HandShape { beta: [0.0; 10] }
    }
}

impl HandShape {
    pub fn global_scale(&self) -> f64 {
        1.0 + 0.1 * self.beta[0].tanh()
    }

    pub fn finger_scale(&self, finger: usize) -> f64 {
        1.0 + 0.1 * self.beta[1 + finger].tanh()
    }

    /// Offset of joint `j` in its parent frame, scaled by shape.
    fn joint_offset(&self, j: usize) -> Vec3 {
        let spec = &skeleton_spec().joints[j];
        let mut s = self.global_scale();
        // phalanx offsets (parent inside the finger) get the finger multiplier
        if let Some(f) = spec.finger {
            if spec.parent != 0 {
                s *= self.finger_scale(f);
            }
        }
        Vec3::new(spec.offset[0], spec.offset[1], spec.offset[2]) * s
    }

    fn tip_offset(&self, finger: usize) -> Vec3 {
        let spec = &skeleton_spec().tips[finger];
        let s = self.global_scale() * self.finger_scale(finger);
        Vec3::new(spec.offset[0], spec.offset[1], spec.offset[2]) * s
    }
}

/// Wrist global rotation + 15 finger joint rotations, plus the wrist
/// translation in the camera frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HandPose {
    pub rotations: [RotationAA; NUM_JOINTS],
    pub wrist_translation: Vec3,
}

impl HandPose {
    pub fn identity() -> Self {
        HandPose {
            rotations: [RotationAA::identity(); NUM_JOINTS],
            wrist_translation: Vec3::zeros(),
        }
    }
}

pub fn parent_of(joint: usize) -> i32 {
    skeleton_spec().joints[joint].parent
}

pub fn joint_name(joint: usize) -> &'static str {
    &skeleton_spec().joints[joint].name
}

/// Per-joint global rotations and positions.
#[derive(Debug, Clone)]
pub struct FkResult {
    pub joint_positions: [Vec3; NUM_JOINTS],
    pub joint_rotations: [Mat3; NUM_JOINTS],
    pub keypoints: [Vec3; NUM_KEYPOINTS],
}

pub fn forward_kinematics_full(pose: &HandPose, shape: &HandShape) -> FkResult {
    let mut positions = [Vec3::zeros(); NUM_JOINTS];
    let mut rotations = [Mat3::identity(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let local = aa_to_matrix(pose.rotations[j]);
        let parent = skeleton_spec().joints[j].parent;
        if parent < 0 {
            positions[j] = pose.wrist_translation;
            rotations[j] = local;
        } else {
            let p = parent as usize;
            positions[j] = positions[p] + rotations[p] * shape.joint_offset(j);
            rotations[j] = rotations[p] * local;
        }
    }
    let mut keypoints = [Vec3::zeros(); NUM_KEYPOINTS];
    keypoints[..NUM_JOINTS].copy_from_slice(&positions);
    for f in 0..NUM_FINGERS {
        let parent = skeleton_spec().tips[f].parent as usize;
        keypoints[NUM_JOINTS + f] = positions[parent] + rotations[parent] * shape.tip_offset(f);
    }
    FkResult {
        joint_positions: positions,
        joint_rotations: rotations,
        keypoints,
    }
}

/// The 21 keypoint positions in the camera frame.
pub fn forward_kinematics(pose: &HandPose, shape: &HandShape) -> [Vec3; NUM_KEYPOINTS] {
    forward_kinematics_full(pose, shape).keypoints
}

// ---------------------------------------------------------------------------
// Surface mesh

/// Bone segment endpoints in the rest skeleton, the joint carrying its
/// transform, and the capsule radius.
#[derive(Debug, Clone, Copy)]
struct Bone {
    start: Vec3,
    end: Vec3,
    joint: usize,
    radius: f64,
}

fn rest_fk(shape: &HandShape) -> FkResult {
    forward_kinematics_full(&HandPose::identity(), shape)
}

fn bones(shape: &HandShape) -> Vec<Bone> {
    let fk = rest_fk(shape);
    let spec = skeleton_spec();
    let mut out = Vec::with_capacity(NUM_BONES);
    // palm bones: wrist -> each MCP
    for (j, joint) in spec.joints.iter().enumerate() {
        if joint.parent == 0 {
            out.push(Bone {
                start: fk.joint_positions[0],
                end: fk.joint_positions[j],
                joint: 0,
                radius: 0.013,
            });
        }
    }
    // phalanges
    for (j, joint) in spec.joints.iter().enumerate() {
        if joint.parent > 0 {
            let p = joint.parent as usize;
            let thumb = joint.finger == Some(4);
            out.push(Bone {
                start: fk.joint_positions[p],
                end: fk.joint_positions[j],
                joint: p,
                radius: if thumb { 0.011 } else { 0.009 },
            });
        }
    }
    // distal phalanges: DIP -> tip
    for (f, tip) in spec.tips.iter().enumerate() {
        let p = tip.parent as usize;
        out.push(Bone {
            start: fk.joint_positions[p],
            end: fk.keypoints[NUM_JOINTS + f],
            joint: p,
            radius: if f == 4 { 0.009 } else { 0.0075 },
        });
    }
    debug_assert_eq!(out.len(), NUM_BONES);
    out
}

const CAPSULE_RADIAL: usize = 8;
const CAPSULE_CAP_RINGS: usize = 2;

fn append_capsule(bone: &Bone, vertices: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>) {
    let axis = bone.end - bone.start;
    let d = axis.normalize();
    // stable orthonormal basis
    let pick = if d.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let u = d.cross(&pick).normalize();
    let v = d.cross(&u);
    let r = bone.radius;
    let base = vertices.len();

    // rings from bottom pole to top pole
    let mut ring_centers: Vec<(Vec3, f64)> = Vec::new(); // (center, ring radius)
    for i in 1..=CAPSULE_CAP_RINGS {
        let lat = std::f64::consts::FRAC_PI_2 * i as f64 / (CAPSULE_CAP_RINGS + 1) as f64;
        ring_centers.push((bone.start - d * (r * lat.cos()), r * lat.sin()));
    }
    ring_centers.push((bone.start, r));
    ring_centers.push((bone.end, r));
    for i in (1..=CAPSULE_CAP_RINGS).rev() {
        let lat = std::f64::consts::FRAC_PI_2 * i as f64 / (CAPSULE_CAP_RINGS + 1) as f64;
        ring_centers.push((bone.end + d * (r * lat.cos()), r * lat.sin()));
    }

    vertices.push(bone.start - d * r); // bottom pole
    for (c, rr) in &ring_centers {
        for s in 0..CAPSULE_RADIAL {
            let a = 2.0 * std::f64::consts::PI * s as f64 / CAPSULE_RADIAL as f64;
            vertices.push(c + (u * a.cos() + v * a.sin()) * *rr);
        }
    }
    vertices.push(bone.end + d * r); // top pole

    let ring = |i: usize, s: usize| base + 1 + i * CAPSULE_RADIAL + (s % CAPSULE_RADIAL);
    let bottom_pole = base;
    let top_pole = vertices.len() - 1;
    let n_rings = ring_centers.len();
    for s in 0..CAPSULE_RADIAL {
        faces.push([bottom_pole, ring(0, s + 1), ring(0, s)]);
        faces.push([top_pole, ring(n_rings - 1, s), ring(n_rings - 1, s + 1)]);
    }
    for i in 0..n_rings - 1 {
        for s in 0..CAPSULE_RADIAL {
            let a = ring(i, s);
            let b = ring(i, s + 1);
            let c = ring(i + 1, s + 1);
            let e = ring(i + 1, s);
            faces.push([a, b, c]);
            faces.push([a, c, e]);
        }
    }
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Skinned hand surface with precomputed rest mesh and skinning weights
/// for one shape. Immutable after construction; posing is a pure query.
pub struct HandModel {
    pub shape: HandShape,
    rest_mesh: TriMesh,
    rest_joints: [Vec3; NUM_JOINTS],
    /// Per vertex: up to two (joint, weight) influences, weights sum to 1.
    weights: Vec<[(usize, f64); 2]>,
}

impl HandModel {
    pub fn new(shape: HandShape) -> Self {
        let bone_list = bones(&shape);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for bone in &bone_list {
            append_capsule(bone, &mut vertices, &mut faces);
        }
        let weights = vertices
            .iter()
            .map(|vtx| {
                let mut ds: Vec<(usize, f64)> = bone_list
                    .iter()
                    .map(|b| point_segment_distance(vtx, &b.start, &b.end))
                    .enumerate()
                    .collect();
                ds.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                let (b0, d0) = ds[0];
                let (b1, d1) = ds[1];
                let w0 = 1.0 / (d0.powi(4) + 1e-12);
                let w1 = 1.0 / (d1.powi(4) + 1e-12);
                let mut w = w0 / (w0 + w1);
                if w > 0.99 {
                    w = 1.0;
                }
                [(bone_list[b0].joint, w), (bone_list[b1].joint, 1.0 - w)]
            })
            .collect();
        let rest_mesh = TriMesh::new(vertices, faces).expect("capsule mesh is valid");
        let rest_joints = rest_fk(&shape).joint_positions;
        HandModel {
            shape,
            rest_mesh,
            rest_joints,
            weights,
        }
    }

    pub fn rest_mesh(&self) -> &TriMesh {
        &self.rest_mesh
    }

    /// Linear blend skinning of the rest mesh under `pose`.
    pub fn skin_mesh(&self, pose: &HandPose) -> TriMesh {
        let fk = forward_kinematics_full(pose, &self.shape);
        let posed: Vec<Vec3> = self
            .rest_mesh
            .vertices()
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| {
                let mut out = Vec3::zeros();
                for &(joint, weight) in w {
                    if weight == 0.0 {
                        continue;
                    }
                    let t = fk.joint_positions[joint]
                        + fk.joint_rotations[joint] * (v - self.rest_joints[joint]);
                    out += weight * t;
                }
                out
            })
            .collect();
        TriMesh::new(posed, self.rest_mesh.faces().to_vec()).expect("skinned mesh is valid")
    }

    /// Vertices whose weight is entirely on a single joint (used by tests).
    pub fn single_joint_vertices(&self) -> Vec<(usize, usize)> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w[0].1 == 1.0)
            .map(|(i, w)| (i, w[0].0))
            .collect()
    }
}

/// One-shot convenience wrapper over [`HandModel`].
pub fn skin_mesh(pose: &HandPose, shape: &HandShape) -> TriMesh {
    HandModel::new(*shape).skin_mesh(pose)
}

// ---------------------------------------------------------------------------
// Anchors

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub face: usize,
    pub barycentric: [f64; 3],
}

/// 32 barycentric attachments on the canonical hand mesh: 4 pads per digit
/// (proximal, middle, distal, tip) plus 12 palm anchors, all on
/// palmar-side faces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorTable {
    pub version: u32,
    pub anchors: Vec<AnchorEntry>,
}

impl AnchorTable {
    /// The versioned table embedded in the build.
    pub fn builtin() -> &'static AnchorTable {
        use std::sync::OnceLock;
        static TABLE: OnceLock<AnchorTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let t: AnchorTable =
                serde_json::from_str(ANCHOR_TABLE_JSON).expect("embedded anchor table parses");
            assert_eq!(t.version, 1);
            assert_eq!(t.anchors.len(), NUM_ANCHORS);
            t
        })
    }

    /// Recomputes the table from palmar target points on the canonical
    /// (beta = 0) rest mesh. Deterministic; the builtin asset is a frozen
    /// copy of this computation.
    pub fn compute_canonical() -> AnchorTable {
        let shape = HandShape::default();
        let model = HandModel::new(shape);
        let mesh = model.rest_mesh();
        let fk = rest_fk(&shape);
        let spec = skeleton_spec();
        let palmar = Vec3::new(0.0, 0.0, -0.02);

        let mut targets: Vec<Vec3> = Vec::with_capacity(NUM_ANCHORS);
        // 4 pads per digit: proximal, middle, distal, tip
        for f in 0..NUM_FINGERS {
            let chain: Vec<usize> = (0..NUM_JOINTS)
                .filter(|&j| spec.joints[j].finger == Some(f))
                .collect();
            let mcp = fk.joint_positions[chain[0]];
            let pip = fk.joint_positions[chain[1]];
            let dip = fk.joint_positions[chain[2]];
            let tip = fk.keypoints[NUM_JOINTS + f];
            targets.push((mcp + pip) * 0.5 + palmar);
            targets.push((pip + dip) * 0.5 + palmar);
            targets.push((dip + tip) * 0.5 + palmar);
            targets.push(tip + palmar);
        }
        // 12 palm anchors on a 4 x 3 grid
        for &x in &[-0.030, -0.010, 0.010, 0.030] {
            for &y in &[0.025, 0.050, 0.075] {
                targets.push(Vec3::new(x, y, -0.03));
            }
        }
        debug_assert_eq!(targets.len(), NUM_ANCHORS);

        let anchors = targets
            .iter()
            .map(|t| {
                let mut best = (0usize, [0.0; 3], f64::INFINITY);
                for (fi, _) in mesh.faces().iter().enumerate() {
                    let tri = mesh.triangle(fi);
                    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
                    // palmar-facing faces only
                    if n.z >= -0.2 * n.norm() {
                        continue;
                    }
                    let (cp, (u, v, w)) =
                        crate::mesh::sdf::closest_point_triangle(t, &tri[0], &tri[1], &tri[2]);
                    let d = (t - cp).norm();
                    if d < best.2 {
                        best = (fi, [u, v, w], d);
                    }
                }
                AnchorEntry {
                    face: best.0,
                    barycentric: best.1,
                }
            })
            .collect();
        AnchorTable {
            version: 1,
            anchors,
        }
    }
}

/// Anchor positions and local-to-global frames on a skinned hand mesh.
///
/// Frame columns: x along the first triangle edge, z along the face
/// normal, y completing the right-handed frame.
pub fn anchor_states(mesh: &TriMesh, table: &AnchorTable) -> Result<Vec<AnchorFrame>> {
    table
        .anchors
        .iter()
        .map(|a| {
            if a.face >= mesh.faces().len() {
                return Err(Error::DimensionMismatch {
                    expected: mesh.faces().len(),
                    got: a.face,
                });
            }
            let [p1, p2, p3] = mesh.triangle(a.face);
            let e1 = p2 - p1;
            let e2 = p3 - p2;
            let n = e1.cross(&e2);
            let area = 0.5 * n.norm();
            if area < 1e-12 {
                return Err(Error::DegenerateTriangle { face: a.face, area });
            }
            let position =
                a.barycentric[0] * p1 + a.barycentric[1] * p2 + a.barycentric[2] * p3;
            let x = e1.normalize();
            let z = n.normalize();
            let y = z.cross(&x);
            Ok(AnchorFrame {
                position,
                frame: Mat3::from_columns(&[x, y, z]),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Joint hierarchy

/// Four-level hand joint hierarchy with per-joint descendant keypoints.
#[derive(Debug, Clone)]
pub struct JointHierarchy {
    /// levels[l] holds the joint indices of level l+1.
    pub levels: [Vec<usize>; 4],
    /// children[j] holds the strictly-downstream keypoint indices of joint j.
    pub children: Vec<Vec<usize>>,
}

pub fn joint_hierarchy() -> JointHierarchy {
    let spec = skeleton_spec();
    let mut levels: [Vec<usize>; 4] = [vec![], vec![], vec![], vec![]];
    levels[0].push(0);
    for f in 0..NUM_FINGERS {
        let chain: Vec<usize> = (0..NUM_JOINTS)
            .filter(|&j| spec.joints[j].finger == Some(f))
            .collect();
        levels[1].push(chain[0]);
        levels[2].push(chain[1]);
        levels[3].push(chain[2]);
    }
    for l in &mut levels {
        l.sort_unstable();
    }
    let mut children: Vec<Vec<usize>> = vec![vec![]; NUM_JOINTS];
    children[0] = (1..NUM_KEYPOINTS).collect();
    for f in 0..NUM_FINGERS {
        let chain: Vec<usize> = (0..NUM_JOINTS)
            .filter(|&j| spec.joints[j].finger == Some(f))
            .collect();
        let tip = NUM_JOINTS + f;
        children[chain[0]] = vec![chain[1], chain[2], tip];
        children[chain[1]] = vec![chain[2], tip];
        children[chain[2]] = vec![tip];
    }
    JointHierarchy { levels, children }
}
