//! Pose-accuracy and physics-plausibility metrics: MJE, PA-MJE, MME,
//! OCE, MCE, SMCE, ADD, ADD-S with 0.1-diameter rates, reprojection
//! error, contact/penetration, and an equilibrium-residual stability
//! proxy standing in for simulation displacement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::Gravity;
use crate::geom::{procrustes_align, project_pinhole, CameraIntrinsics, Mat3, Vec3};
use crate::hand::{HandModel, HandPose};
use crate::mesh::{bbox_corners, bbox_keypoints_27, SdfQuery, TriMesh};
use crate::solve::{solve_pseudo_forces, SolverConfig};

/// Finite set of object-frame rotations under which the object is
/// self-identical; always contains the identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub rotations: Vec<Mat3>,
    /// Provenance note for continuous symmetries sampled into the list.
    pub axis_tag: Option<(Vec3, usize)>,
}

impl SymmetrySpec {
    pub fn none() -> Self {
        SymmetrySpec {
            rotations: vec![Mat3::identity()],
            axis_tag: None,
        }
    }

    pub fn new(mut rotations: Vec<Mat3>) -> Result<Self> {
        let has_identity = rotations
            .iter()
            .any(|r| (r - Mat3::identity()).norm() < 1e-9);
        if !has_identity {
            rotations.insert(0, Mat3::identity());
        }
        for r in &rotations {
            if (r.transpose() * r - Mat3::identity()).norm() > 1e-9
                || (r.determinant() - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidParameter("symmetry entry is not a rotation".into()));
            }
        }
        Ok(SymmetrySpec {
            rotations,
            axis_tag: None,
        })
    }

    /// Discrete sampling of a continuous rotational symmetry axis.
    pub fn around_axis(axis: Vec3, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidParameter("need at least one axis sample".into()));
        }
        let a = axis.normalize();
        let rotations = (0..samples)
            .map(|i| {
                let angle = i as f64 * std::f64::consts::TAU / samples as f64;
                crate::geom::aa_to_matrix(crate::geom::RotationAA(a * angle))
            })
            .collect();
        let mut spec = SymmetrySpec::new(rotations)?;
        spec.axis_tag = Some((a, samples));
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    /// PA-MJE alignment includes uniform scale (Umeyama); rigid-only
    /// when false.
    pub pa_with_scale: bool,
    /// Contact threshold tau, meters.
    pub contact_tau: f64,
    /// Model-point budget for ADD / ADD-S / REP.
    pub max_model_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pa_with_scale: true,
            contact_tau: 0.002,
            max_model_points: 2048,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseErrors {
    pub mje_mm: f64,
    pub pa_mje_mm: f64,
    pub mme_mm: f64,
    pub oce_mm: f64,
    pub mce_mm: f64,
    pub smce_mm: f64,
    pub add_mm: f64,
    pub add_s_mm: f64,
    /// 100 if ADD is below 0.1 x object diameter, else 0.
    pub add_01d_pct: f64,
    pub adds_01d_pct: f64,
    pub rep_px: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicsMetrics {
    pub contact: bool,
    pub pd_mm: f64,
}

/// Hand-side inputs: 21 keypoints plus mesh vertices in correspondence
/// with the ground truth.
pub struct HandEval<'a> {
    pub keypoints: &'a [Vec3],
    pub mesh_vertices: &'a [Vec3],
}

fn mean_dist(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len() as f64
}

/// Deterministic farthest-point sampling of up to `max` mesh vertices,
/// seeded from vertex 0.
pub fn fps_sample(mesh: &TriMesh, max: usize) -> Vec<Vec3> {
    let verts = mesh.vertices();
    if verts.len() <= max {
        return verts.to_vec();
    }
    let mut chosen = Vec::with_capacity(max);
    let mut dist = vec![f64::INFINITY; verts.len()];
    let mut current = 0usize;
    chosen.push(verts[0]);
    for _ in 1..max {
        let mut best = (0usize, -1.0);
        for (i, v) in verts.iter().enumerate() {
            let d = (v - verts[current]).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.1 {
                best = (i, dist[i]);
            }
        }
        current = best.0;
        chosen.push(verts[current]);
    }
    chosen
}

fn diameter(points: &[Vec3]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            d = d.max((points[i] - points[j]).norm_squared());
        }
    }
    d.sqrt()
}

#[allow(clippy::too_many_arguments)]
pub fn pose_errors(
    pred_hand: &HandEval,
    gt_hand: &HandEval,
    pred_obj: (&Mat3, &Vec3),
    gt_obj: (&Mat3, &Vec3),
    object_mesh: &TriMesh,
    symmetry: &SymmetrySpec,
    camera: &CameraIntrinsics,
    cfg: &EvalConfig,
) -> Result<PoseErrors> {
    if pred_hand.keypoints.len() != gt_hand.keypoints.len() {
        return Err(Error::DimensionMismatch {
            expected: gt_hand.keypoints.len(),
            got: pred_hand.keypoints.len(),
        });
    }
    if pred_hand.mesh_vertices.len() != gt_hand.mesh_vertices.len() {
        return Err(Error::DimensionMismatch {
            expected: gt_hand.mesh_vertices.len(),
            got: pred_hand.mesh_vertices.len(),
        });
    }
    let (rp, tp) = pred_obj;
    let (rg, tg) = gt_obj;
    let to_mm = 1000.0;

    let mje = mean_dist(pred_hand.keypoints, gt_hand.keypoints);
    let align = procrustes_align(pred_hand.keypoints, gt_hand.keypoints, cfg.pa_with_scale)?;
    let aligned: Vec<Vec3> = pred_hand.keypoints.iter().map(|p| align.apply(p)).collect();
    let pa_mje = mean_dist(&aligned, gt_hand.keypoints);
    let mme = mean_dist(pred_hand.mesh_vertices, gt_hand.mesh_vertices);

    let center = bbox_keypoints_27(object_mesh).0[0];
    let oce = ((rp * center + tp) - (rg * center + tg)).norm();

    let corners = bbox_corners(object_mesh);
    let mce_for = |r: &Mat3| {
        corners
            .iter()
            .map(|c| ((r * c + tp) - (rg * c + tg)).norm())
            .sum::<f64>()
            / corners.len() as f64
    };
    let mce = mce_for(rp);
    let smce = symmetry
        .rotations
        .iter()
        .map(|s| mce_for(&(rp * s)))
        .fold(f64::INFINITY, f64::min);

    let model = fps_sample(object_mesh, cfg.max_model_points);
    let pred_pts: Vec<Vec3> = model.iter().map(|x| rp * x + tp).collect();
    let gt_pts: Vec<Vec3> = model.iter().map(|x| rg * x + tg).collect();
    let add = mean_dist(&pred_pts, &gt_pts);
    let add_s = pred_pts
        .iter()
        .map(|p| {
            gt_pts
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum::<f64>()
        / pred_pts.len() as f64;
    let dia = diameter(&model);
    let add_01d = if add < 0.1 * dia { 100.0 } else { 0.0 };
    let adds_01d = if add_s < 0.1 * dia { 100.0 } else { 0.0 };

    let mut rep = 0.0;
    for (p, q) in pred_pts.iter().zip(&gt_pts) {
        let a = project_pinhole(*p, camera)?;
        let b = project_pinhole(*q, camera)?;
        rep += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    }
    rep /= pred_pts.len() as f64;

    Ok(PoseErrors {
        mje_mm: mje * to_mm,
        pa_mje_mm: pa_mje * to_mm,
        mme_mm: mme * to_mm,
        oce_mm: oce * to_mm,
        mce_mm: mce * to_mm,
        smce_mm: smce * to_mm,
        add_mm: add * to_mm,
        add_s_mm: add_s * to_mm,
        add_01d_pct: add_01d,
        adds_01d_pct: adds_01d,
        rep_px: rep,
    })
}

/// Per-vertex signed distances of the hand mesh against the object:
/// contact if the closest vertex is within tau, penetration depth from
/// the most negative distance.
pub fn contact_and_penetration(
    hand_mesh: &TriMesh,
    object_mesh: &TriMesh,
    tau: f64,
) -> Result<PhysicsMetrics> {
    let query = SdfQuery::new(object_mesh);
    let min_d = hand_mesh
        .vertices()
        .iter()
        .map(|v| query.signed_distance(v).distance)
        .fold(f64::INFINITY, f64::min);
    Ok(PhysicsMetrics {
        contact: min_d < tau,
        pd_mm: (-min_d).max(0.0) * 1000.0,
    })
}

/// Equilibrium-residual stability proxy: the solved L_force + 30
/// L_torque; a no-contact scene scores 1 (free fall, the squared weight
/// of the unit-mass object).
pub fn stability_proxy(
    model: &HandModel,
    pose: &HandPose,
    object_mesh: &TriMesh,
    gravity: Gravity,
    cfg: &SolverConfig,
) -> Result<f64> {
    match solve_pseudo_forces(model, pose, object_mesh, gravity, cfg) {
        Ok(report) => Ok(report.residuals.force + cfg.weight_torque * report.residuals.torque),
        Err(Error::AllAnchorsFrozen) => Ok(1.0),
        Err(e) => Err(e),
    }
}
