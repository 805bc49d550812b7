//! Two-stage candidate aggregation: heatmap-guided level-by-level hand
//! aggregation, translation-then-rotation object aggregation, and
//! physics-based re-ranking of the retained top-K candidates.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::Gravity;
use crate::geom::{project_pinhole, CameraIntrinsics, Mat3, RotationAA, Vec3};
use crate::hand::{
    forward_kinematics, joint_hierarchy, HandModel, HandPose, HandShape, JointHierarchy,
    NUM_KEYPOINTS,
};
use crate::heatmap::{image_to_heatmap, sample_bilinear, HeatmapStack};
use crate::mesh::sdf::SdfQuery;
use crate::mesh::{ObjectKeypoints27, TriMesh};
use crate::physics::{
    contact_residual, hand_phys_score, object_phys_score, torque_residual, ContactState,
    PhysicsResiduals,
};
use crate::solve::{build_scene, solve_phase1_only, SolverConfig};

pub const AGGREGATION_SCHEMA: &str = "aggregation.v1";

pub const HAND_CHANNELS: usize = NUM_KEYPOINTS;
pub const OBJECT_CHANNELS: usize = 27;

// ---------------------------------------------------------------------------
// Configuration

/// Candidate-count and top-K settings for the visual and physics stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationConfig {
    /// Number of candidates per entity.
    pub n: usize,
    /// Visual top-K for hand level aggregation.
    pub k_vis_hand: usize,
    /// Visual top-K for object translation aggregation.
    pub k_vis_obj_t: usize,
    /// Visual top-K for object rotation aggregation.
    pub k_vis_obj_r: usize,
    /// Physics top-K for the hand re-ranking stage.
    pub k_phy_hand: usize,
    /// Physics top-K for the object pair re-ranking stage.
    pub k_phy_obj: usize,
    /// Run the full two-phase solve per candidate instead of the default
    /// phase-1-only budget.
    pub full_solve: bool,
    /// Disable to stop after the visual stage (ablation parity).
    pub enable_physics: bool,
    pub solver: SolverConfig,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            n: 100,
            k_vis_hand: 30,
            k_vis_obj_t: 10,
            k_vis_obj_r: 10,
            k_phy_hand: 5,
            k_phy_obj: 5,
            full_solve: false,
            enable_physics: true,
            solver: SolverConfig::default(),
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        let ks = [
            ("k_vis_hand", self.k_vis_hand),
            ("k_vis_obj_t", self.k_vis_obj_t),
            ("k_vis_obj_r", self.k_vis_obj_r),
            ("k_phy_hand", self.k_phy_hand),
            ("k_phy_obj", self.k_phy_obj),
        ];
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        for (name, k) in ks {
            if k == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
            if k > self.n {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {k} exceeds n = {}",
                    self.n
                )));
            }
        }
        if self.k_phy_hand > self.k_vis_hand {
            return Err(Error::InvalidParameter(
                "k_phy_hand exceeds the retained visual set k_vis_hand".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Selection

/// Indices of the `k` largest scores, descending; ties break toward the
/// lower candidate index.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidParameter(format!(
            "top-k {} out of range for {} scores",
            k,
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Weighted mean of the selected rows of `values` with a documented
/// fallback: a nonpositive weight sum degrades to the unweighted mean of
/// the same selection.
fn weighted_mean_vec3(values: &[Vec3], weights: &[f64]) -> Vec3 {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        values
            .iter()
            .zip(weights)
            .map(|(v, w)| v * *w)
            .sum::<Vec3>()
            / total
    } else {
        values.iter().sum::<Vec3>() / values.len() as f64
    }
}

/// Chordal mean: weighted average of rotation matrices projected back to
/// SO(3) via SVD with a determinant fix.
pub fn chordal_mean(rotations: &[Mat3], weights: Option<&[f64]>) -> Result<Mat3> {
    if rotations.is_empty() {
        return Err(Error::InvalidParameter(
            "chordal mean of an empty rotation set".into(),
        ));
    }
    let uniform = vec![1.0; rotations.len()];
    let mut w: &[f64] = weights.unwrap_or(&uniform);
    if w.iter().sum::<f64>() <= 0.0 {
        w = &uniform;
    }
    let sum: Mat3 = rotations
        .iter()
        .zip(w)
        .map(|(r, wi)| r * *wi)
        .sum::<Mat3>();
    let svd = sum.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        Error::DegenerateConfiguration("SVD of rotation average failed".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        Error::DegenerateConfiguration("SVD of rotation average failed".into())
    })?;
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Ok(u * d * v_t)
}

// ---------------------------------------------------------------------------
// Visual scoring

fn sample_image_point(stack: &HeatmapStack, channel: usize, u: f64, v: f64) -> Result<f64> {
    let (hu, hv) = image_to_heatmap(u, v);
    sample_bilinear(stack, channel, hu, hv)
}

fn score_keypoints(
    keypoints: &[Vec3],
    channels: &[usize],
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
) -> Result<f64> {
    let mut score = 0.0;
    for &c in channels {
        match project_pinhole(keypoints[c], camera) {
            Ok((u, v)) => score += sample_image_point(stack, c, u, v)?,
            // A keypoint behind the camera cannot hit any heatmap pixel.
            Err(Error::BehindCamera { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(score)
}

/// Visual score of one hand candidate at one joint: the summed heatmap
/// responses of the joint's descendant keypoints.
pub fn visual_score_hand(
    pose: &HandPose,
    joint: usize,
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
    shape: &HandShape,
) -> Result<f64> {
    if stack.channels() != HAND_CHANNELS {
        return Err(Error::BadChannel {
            channel: HAND_CHANNELS - 1,
            channels: stack.channels(),
        });
    }
    let hierarchy = joint_hierarchy();
    let kp = forward_kinematics(pose, shape);
    score_keypoints(&kp, &hierarchy.children[joint], stack, camera)
}

/// Visual score of one object candidate: summed heatmap responses of the
/// 27 projected bounding-box keypoints.
pub fn visual_score_object(
    rotation: &Mat3,
    translation: &Vec3,
    keypoints27: &ObjectKeypoints27,
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
) -> Result<f64> {
    if stack.channels() != OBJECT_CHANNELS {
        return Err(Error::BadChannel {
            channel: OBJECT_CHANNELS - 1,
            channels: stack.channels(),
        });
    }
    let posed: Vec<Vec3> = keypoints27
        .0
        .iter()
        .map(|p| rotation * p + translation)
        .collect();
    let all: Vec<usize> = (0..OBJECT_CHANNELS).collect();
    score_keypoints(&posed, &all, stack, camera)
}

// ---------------------------------------------------------------------------
// Hand visual aggregation

/// Per-joint outcome of a level aggregation pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointSelection {
    pub joint: usize,
    pub selected: Vec<usize>,
    /// Visual scores of every candidate at this joint, in candidate order.
    pub scores: Vec<f64>,
    pub aggregated: RotationAA,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub joints: Vec<JointSelection>,
}

/// Aggregates one hierarchy level: per joint, the top-K candidates by
/// visual score are averaged (score-weighted, axis-angle canonicalized to
/// magnitude <= pi) and the result overwrites that joint in all
/// candidates. A zero score sum falls back to the unweighted mean of the
/// same top-K.
pub fn aggregate_hand_level(
    candidates: &mut [HandPose],
    joints: &[usize],
    scores: &[Vec<f64>],
    k: usize,
) -> Result<Vec<JointSelection>> {
    if scores.len() != joints.len() {
        return Err(Error::DimensionMismatch {
            expected: joints.len(),
            got: scores.len(),
        });
    }
    let mut out = Vec::with_capacity(joints.len());
    for (ji, &joint) in joints.iter().enumerate() {
        let selected = top_k(&scores[ji], k)?;
        let values: Vec<Vec3> = selected
            .iter()
            .map(|&i| candidates[i].rotations[joint].canonicalized().0)
            .collect();
        let weights: Vec<f64> = selected.iter().map(|&i| scores[ji][i]).collect();
        let mean = RotationAA(weighted_mean_vec3(&values, &weights));
        for c in candidates.iter_mut() {
            c.rotations[joint] = mean;
        }
        out.push(JointSelection {
            joint,
            selected,
            scores: scores[ji].clone(),
            aggregated: mean,
        });
    }
    Ok(out)
}

fn hand_level_scores(
    candidates: &[HandPose],
    joints: &[usize],
    hierarchy: &JointHierarchy,
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
    shape: &HandShape,
) -> Result<Vec<Vec<f64>>> {
    let per_candidate: Vec<Vec<f64>> = candidates
        .par_iter()
        .map(|pose| {
            let kp = forward_kinematics(pose, shape);
            joints
                .iter()
                .map(|&j| score_keypoints(&kp, &hierarchy.children[j], stack, camera))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    // Transpose to joint-major for the selection step.
    Ok((0..joints.len())
        .map(|ji| per_candidate.iter().map(|row| row[ji]).collect())
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandVisualResult {
    pub pose: HandPose,
    /// Level-4 top-K candidate indices retained for the physics stage,
    /// ranked by summed level-4 joint score.
    pub k4: Vec<usize>,
    pub levels: Vec<LevelReport>,
}

/// Level-by-level hand aggregation, strictly levels 1 through 4, with
/// scores for each level computed after the overwrites of all previous
/// levels. Also returns the candidates as they stood when level 4 was
/// scored (levels 1-3 aggregated, own level-4 values) for re-ranking.
pub fn visual_aggregate_hand(
    candidates: &[HandPose],
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
    shape: &HandShape,
    cfg: &AggregationConfig,
) -> Result<(HandVisualResult, Vec<HandPose>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no hand candidates".into()));
    }
    if stack.channels() != HAND_CHANNELS {
        return Err(Error::BadChannel {
            channel: HAND_CHANNELS - 1,
            channels: stack.channels(),
        });
    }
    let k = cfg.k_vis_hand.min(candidates.len());
    let hierarchy = joint_hierarchy();
    let mut work = candidates.to_vec();
    let mut levels = Vec::with_capacity(4);
    let mut k4 = Vec::new();
    let mut level4_snapshot = Vec::new();
    for (li, joints) in hierarchy.levels.iter().enumerate() {
        let scores = hand_level_scores(&work, joints, &hierarchy, stack, camera, shape)?;
        if li == 3 {
            // Retain the level-4 candidates before the final overwrite:
            // these carry their own distal joints on top of the already
            // aggregated lower levels.
            let total: Vec<f64> = (0..work.len())
                .map(|i| scores.iter().map(|s| s[i]).sum())
                .collect();
            k4 = top_k(&total, k)?;
            level4_snapshot = k4.iter().map(|&i| work[i]).collect();
        }
        let joints_out = aggregate_hand_level(&mut work, joints, &scores, k)?;
        levels.push(LevelReport {
            level: li + 1,
            joints: joints_out,
        });
    }
    // Every joint has been overwritten, so all candidates now agree.
    let pose = work[0];
    Ok((HandVisualResult { pose, k4, levels }, level4_snapshot))
}

// ---------------------------------------------------------------------------
// Object visual aggregation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectVisualResult {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub t_selected: Vec<usize>,
    pub t_scores: Vec<f64>,
    pub r_selected: Vec<usize>,
    pub r_scores: Vec<f64>,
    /// Original translations of the retained top-K, captured before the
    /// overwrite, for the physics pair stage.
    pub retained_t: Vec<Vec3>,
    /// Rotations of the retained top-K for the physics pair stage.
    pub retained_r: Vec<Mat3>,
}

fn object_scores(
    candidates: &[(Mat3, Vec3)],
    keypoints27: &ObjectKeypoints27,
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .map(|(r, t)| visual_score_object(r, t, keypoints27, stack, camera))
        .collect()
}

/// Object aggregation in two passes: translations first (weighted mean of
/// the top-K, then overwritten into every candidate), then rotations
/// re-scored at the shared translation and combined with a weighted
/// chordal mean.
pub fn visual_aggregate_object(
    candidates: &[(Mat3, Vec3)],
    keypoints27: &ObjectKeypoints27,
    stack: &HeatmapStack,
    camera: &CameraIntrinsics,
    cfg: &AggregationConfig,
) -> Result<ObjectVisualResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no object candidates".into()));
    }
    let k_t = cfg.k_vis_obj_t.min(candidates.len());
    let k_r = cfg.k_vis_obj_r.min(candidates.len());

    let t_scores = object_scores(candidates, keypoints27, stack, camera)?;
    let t_selected = top_k(&t_scores, k_t)?;
    let retained_t: Vec<Vec3> = t_selected.iter().map(|&i| candidates[i].1).collect();
    let weights: Vec<f64> = t_selected.iter().map(|&i| t_scores[i]).collect();
    let translation = weighted_mean_vec3(&retained_t, &weights);

    let shared: Vec<(Mat3, Vec3)> = candidates
        .iter()
        .map(|(r, _)| (*r, translation))
        .collect();
    let r_scores = object_scores(&shared, keypoints27, stack, camera)?;
    let r_selected = top_k(&r_scores, k_r)?;
    let retained_r: Vec<Mat3> = r_selected.iter().map(|&i| candidates[i].0).collect();
    let r_weights: Vec<f64> = r_selected.iter().map(|&i| r_scores[i]).collect();
    let rotation = chordal_mean(&retained_r, Some(&r_weights))?;

    Ok(ObjectVisualResult {
        rotation,
        translation,
        t_selected,
        t_scores,
        r_selected,
        r_scores,
        retained_t,
        retained_r,
    })
}

// ---------------------------------------------------------------------------
// Physics aggregation

fn solve_candidate(
    model: &HandModel,
    pose: &HandPose,
    query: &SdfQuery,
    centroid: Vec3,
    gravity: Gravity,
    cfg: &AggregationConfig,
) -> Result<(PhysicsResiduals, crate::force::GlobalForceField)> {
    let scene = build_scene(model, pose, query, centroid, gravity, &cfg.solver)?;
    let report = if cfg.full_solve {
        let mut vars = crate::solve::init_coefficients(&scene.contact, &cfg.solver);
        let trace1 = crate::solve::solve_phase1(&mut vars, &scene, &cfg.solver)?;
        crate::solve::solve_phase2(&mut vars, &scene, &cfg.solver, trace1)?
    } else {
        solve_phase1_only(&scene, &cfg.solver)?
    };
    Ok((report.residuals, report.force_field))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandPhysicsResult {
    /// Physics score per retained candidate, in `k4` order; `None` marks
    /// an all-frozen candidate that can never be selected.
    pub scores: Vec<Option<f64>>,
    /// Positions into the `k4` list, not raw candidate indices.
    pub selected: Vec<usize>,
    /// False when every candidate froze and the visual result stands.
    pub applied: bool,
}

/// Re-ranks the retained level-4 candidates by `-L_force * L_contact`
/// against the aggregated object pose and replaces the final distal
/// joints with the unweighted mean of the top-K_phy. If every candidate
/// has all anchors frozen the visual result is left untouched.
pub fn physics_aggregate_hand(
    retained: &[HandPose],
    final_pose: &mut HandPose,
    model: &HandModel,
    object_query: &SdfQuery,
    object_centroid: Vec3,
    gravity: Gravity,
    cfg: &AggregationConfig,
) -> Result<HandPhysicsResult> {
    if retained.is_empty() {
        return Err(Error::InvalidParameter(
            "physics stage received no retained hand candidates".into(),
        ));
    }
    let scores: Vec<Option<f64>> = retained
        .par_iter()
        .map(|pose| {
            match solve_candidate(model, pose, object_query, object_centroid, gravity, cfg) {
                Ok((res, _)) => Ok(Some(hand_phys_score(&res))),
                Err(Error::AllAnchorsFrozen) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if scores.iter().all(|s| s.is_none()) {
        return Ok(HandPhysicsResult {
            scores,
            selected: Vec::new(),
            applied: false,
        });
    }
    let ranked: Vec<f64> = scores
        .iter()
        .map(|s| s.unwrap_or(f64::NEG_INFINITY))
        .collect();
    let k = cfg.k_phy_hand.min(retained.len());
    let selected = top_k(&ranked, k)?;
    let hierarchy = joint_hierarchy();
    for &joint in &hierarchy.levels[3] {
        let values: Vec<Vec3> = selected
            .iter()
            .map(|&i| retained[i].rotations[joint].canonicalized().0)
            .collect();
        let mean = values.iter().sum::<Vec3>() / values.len() as f64;
        final_pose.rotations[joint] = RotationAA(mean);
    }
    Ok(HandPhysicsResult {
        scores,
        selected,
        applied: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectPhysicsResult {
    /// Scores for all |K_T| x |K_R| pairs, pair index = t * |K_R| + r.
    pub scores: Vec<f64>,
    pub selected: Vec<usize>,
    pub applied: bool,
}

/// Scores every translation x rotation pair with the aggregated hand's
/// force field (`-L_torque * L_contact`, distances recomputed per pair)
/// and averages the top-K_phy pairs: arithmetic mean for translations,
/// chordal mean for rotations.
pub fn physics_aggregate_object(
    retained_t: &[Vec3],
    retained_r: &[Mat3],
    field: &crate::force::GlobalForceField,
    object_mesh: &TriMesh,
    cfg: &AggregationConfig,
) -> Result<(Mat3, Vec3, ObjectPhysicsResult)> {
    if retained_t.is_empty() || retained_r.is_empty() {
        return Err(Error::InvalidParameter(
            "physics stage received empty object candidate sets".into(),
        ));
    }
    let n_r = retained_r.len();
    let pairs: Vec<(usize, usize)> = (0..retained_t.len())
        .flat_map(|a| (0..n_r).map(move |b| (a, b)))
        .collect();
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let posed = object_mesh.transformed(&retained_r[b], &retained_t[a]);
            let query = SdfQuery::new(&posed);
            let distances: Vec<f64> = field
                .positions
                .iter()
                .map(|p| query.signed_distance(p).distance)
                .collect();
            let centroid = posed.centroid();
            let contact = ContactState {
                distances,
                center_of_mass: centroid,
            };
            let residuals = PhysicsResiduals {
                torque: torque_residual(field, &centroid),
                contact: contact_residual(field, &contact),
                ..Default::default()
            };
            object_phys_score(&residuals)
        })
        .collect();
    let k = cfg.k_phy_obj.min(pairs.len());
    let selected = top_k(&scores, k)?;
    let translations: Vec<Vec3> = selected.iter().map(|&i| retained_t[pairs[i].0]).collect();
    let rotations: Vec<Mat3> = selected.iter().map(|&i| retained_r[pairs[i].1]).collect();
    let translation = translations.iter().sum::<Vec3>() / translations.len() as f64;
    let rotation = chordal_mean(&rotations, None)?;
    Ok((
        rotation,
        translation,
        ObjectPhysicsResult {
            scores,
            selected,
            applied: true,
        },
    ))
}

// ---------------------------------------------------------------------------
// Full pipeline

/// Shared geometry and observations the pipeline runs against.
pub struct AggregationInput<'a> {
    pub model: &'a HandModel,
    /// Object mesh in its own frame.
    pub object_mesh: &'a TriMesh,
    pub gravity: Gravity,
    pub camera: &'a CameraIntrinsics,
    pub hand_heatmaps: &'a HeatmapStack,
    pub object_heatmaps: &'a HeatmapStack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregationReport {
    pub schema: String,
    pub hand_visual: HandVisualResult,
    pub object_visual: ObjectVisualResult,
    pub hand_physics: Option<HandPhysicsResult>,
    pub object_physics: Option<ObjectPhysicsResult>,
    pub final_hand: HandPose,
    pub final_object_rotation: Mat3,
    pub final_object_translation: Vec3,
}

impl AggregationReport {
    pub fn validate(&self) -> Result<()> {
        if self.schema != AGGREGATION_SCHEMA {
            return Err(Error::VersionError {
                expected: AGGREGATION_SCHEMA.into(),
                got: self.schema.clone(),
            });
        }
        Ok(())
    }
}

/// Runs hand VA, object VA, hand PA, object PA in order. Deterministic
/// given its inputs regardless of the rayon schedule: scoring writes to
/// pre-indexed slots and every reduction is sequential.
pub fn aggregate_full(
    input: &AggregationInput,
    hand_candidates: &[HandPose],
    object_candidates: &[(Mat3, Vec3)],
    cfg: &AggregationConfig,
) -> Result<AggregationReport> {
    cfg.validate()?;
    let shape = &input.model.shape;
    let keypoints27 = crate::mesh::bbox_keypoints_27(input.object_mesh);

    let (hand_visual, retained_hand) = visual_aggregate_hand(
        hand_candidates,
        input.hand_heatmaps,
        input.camera,
        shape,
        cfg,
    )?;
    let object_visual = visual_aggregate_object(
        object_candidates,
        &keypoints27,
        input.object_heatmaps,
        input.camera,
        cfg,
    )?;

    let mut final_hand = hand_visual.pose;
    let mut final_r = object_visual.rotation;
    let mut final_t = object_visual.translation;
    let mut hand_physics = None;
    let mut object_physics = None;

    if cfg.enable_physics {
        let posed = input
            .object_mesh
            .transformed(&object_visual.rotation, &object_visual.translation);
        let query = SdfQuery::new(&posed);
        let centroid = posed.centroid();
        let hp = physics_aggregate_hand(
            &retained_hand,
            &mut final_hand,
            input.model,
            &query,
            centroid,
            input.gravity,
            cfg,
        )?;
        let hand_applied = hp.applied;
        hand_physics = Some(hp);
        if hand_applied {
            // Force field of the physics-aggregated hand against the
            // visually aggregated object, reused for every object pair.
            match solve_candidate(input.model, &final_hand, &query, centroid, input.gravity, cfg)
            {
                Ok((_, field)) => {
                    let (r, t, op) = physics_aggregate_object(
                        &object_visual.retained_t,
                        &object_visual.retained_r,
                        &field,
                        input.object_mesh,
                        cfg,
                    )?;
                    final_r = r;
                    final_t = t;
                    object_physics = Some(op);
                }
                // No usable contacts: the visual object pose stands.
                Err(Error::AllAnchorsFrozen) => {
                    object_physics = Some(ObjectPhysicsResult {
                        scores: Vec::new(),
                        selected: Vec::new(),
                        applied: false,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }

    Ok(AggregationReport {
        schema: AGGREGATION_SCHEMA.into(),
        hand_visual,
        object_visual,
        hand_physics,
        object_physics,
        final_hand,
        final_object_rotation: final_r,
        final_object_translation: final_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::aa_to_matrix;
    use crate::heatmap::{render_gaussian, HeatmapConfig};
    use crate::sample::{
        hand_pose_from_candidate, object_pose_from_candidate, perturb_hand, perturb_object,
        PerturbSpec,
    };
    use crate::scenario::{build_canonical, TemplateId};
    use crate::solve::solve_pseudo_forces;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 128.0,
            cy: 128.0,
            width: 256,
            height: 256,
        }
    }

    fn hand_candidates(reference: &HandPose, spec: &PerturbSpec, n: usize, seed: u64) -> Vec<HandPose> {
        perturb_hand(reference, spec, n, seed)
            .unwrap()
            .candidates
            .iter()
            .map(|c| hand_pose_from_candidate(c, reference).unwrap())
            .collect()
    }

    fn object_candidates(
        rotation: &Mat3,
        translation: &Vec3,
        spec: &PerturbSpec,
        n: usize,
        seed: u64,
    ) -> Vec<(Mat3, Vec3)> {
        perturb_object(rotation, translation, spec, n, seed)
            .unwrap()
            .candidates
            .iter()
            .map(|c| object_pose_from_candidate(c).unwrap())
            .collect()
    }

    fn render_hand_heatmaps(pose: &HandPose, shape: &HandShape) -> HeatmapStack {
        let kp = forward_kinematics(pose, shape);
        let pts: Vec<(f64, f64)> = kp
            .iter()
            .map(|p| {
                let (u, v) = project_pinhole(*p, &camera()).unwrap();
                image_to_heatmap(u, v)
            })
            .collect();
        render_gaussian(&pts, &HeatmapConfig::default()).unwrap()
    }

    fn render_object_heatmaps(
        rotation: &Mat3,
        translation: &Vec3,
        keypoints27: &ObjectKeypoints27,
    ) -> HeatmapStack {
        let pts: Vec<(f64, f64)> = keypoints27
            .0
            .iter()
            .map(|p| {
                let (u, v) = project_pinhole(rotation * p + translation, &camera()).unwrap();
                image_to_heatmap(u, v)
            })
            .collect();
        render_gaussian(&pts, &HeatmapConfig::default()).unwrap()
    }

    fn pinch() -> crate::scenario::Scenario {
        build_canonical(TemplateId::PinchSphere, 7).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(AggregationConfig::default().validate().is_ok());
        let bad = AggregationConfig {
            k_vis_hand: 101,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let zero = AggregationConfig {
            k_phy_obj: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn top_k_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let k = rng.gen_range(1..=n);
            // Coarse quantization forces frequent ties.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..5) as f64) / 2.0)
                .collect();
            let got = top_k(&scores, k).unwrap();
            let mut oracle: Vec<usize> = (0..n).collect();
            oracle.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            oracle.truncate(k);
            assert_eq!(got, oracle);
        }
        assert!(top_k(&[1.0], 2).is_err());
    }

    #[test]
    fn self_consistent_score_near_child_count() {
        let sc = pinch();
        let shape = HandShape::default();
        let stack = render_hand_heatmaps(&sc.hand_pose, &shape);
        let hierarchy = joint_hierarchy();
        for level in &hierarchy.levels {
            for &j in level {
                let n = hierarchy.children[j].len() as f64;
                let s = visual_score_hand(&sc.hand_pose, j, &stack, &camera(), &shape).unwrap();
                assert!(
                    (s - n).abs() <= 0.05 * n,
                    "joint {j}: score {s} vs {n} children"
                );
            }
        }
    }

    #[test]
    fn zero_heatmaps_score_zero() {
        let sc = pinch();
        let shape = HandShape::default();
        let zeros = render_gaussian(&[(-100.0, -100.0); 21], &HeatmapConfig::default()).unwrap();
        let s = visual_score_hand(&sc.hand_pose, 0, &zeros, &camera(), &shape).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn peak_dominance_ordering() {
        let sc = pinch();
        let shape = HandShape::default();
        let stack = render_hand_heatmaps(&sc.hand_pose, &shape);
        // A pose displaced several centimeters projects all children well
        // past 3 sigma from every rendered peak.
        let mut far = sc.hand_pose;
        far.wrist_translation += Vec3::new(0.08, 0.08, 0.0);
        let on = visual_score_hand(&sc.hand_pose, 0, &stack, &camera(), &shape).unwrap();
        let off = visual_score_hand(&far, 0, &stack, &camera(), &shape).unwrap();
        assert!(off < on, "off-peak {off} should score below on-peak {on}");
    }

    #[test]
    fn level_aggregation_weighted_mean() {
        let mut cands = vec![HandPose::identity(), HandPose::identity()];
        let a = Vec3::new(0.2, 0.0, 0.1);
        let b = Vec3::new(-0.1, 0.3, 0.0);
        cands[0].rotations[5] = RotationAA(a);
        cands[1].rotations[5] = RotationAA(b);
        let out =
            aggregate_hand_level(&mut cands, &[5], &[vec![1.0, 3.0]], 2).unwrap();
        let expect = (a + b * 3.0) / 4.0;
        assert_relative_eq!(out[0].aggregated.0, expect, epsilon = 1e-12);
        for c in &cands {
            assert_relative_eq!(c.rotations[5].0, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn level_aggregation_identical_candidates_noop() {
        let mut pose = HandPose::identity();
        pose.rotations[2] = RotationAA(Vec3::new(0.1, -0.2, 0.3));
        let mut cands = vec![pose; 4];
        let out = aggregate_hand_level(&mut cands, &[2], &[vec![0.5; 4]], 3).unwrap();
        assert_relative_eq!(out[0].aggregated.0, pose.rotations[2].0, epsilon = 1e-12);
    }

    #[test]
    fn zero_score_sum_falls_back_to_unweighted_mean() {
        let mut cands = vec![HandPose::identity(), HandPose::identity()];
        let a = Vec3::new(0.4, 0.0, 0.0);
        cands[0].rotations[1] = RotationAA(a);
        let out = aggregate_hand_level(&mut cands, &[1], &[vec![0.0, 0.0]], 2).unwrap();
        assert_relative_eq!(out[0].aggregated.0, a / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_candidate_is_identity_aggregation() {
        let sc = pinch();
        let shape = HandShape::default();
        let stack = render_hand_heatmaps(&sc.hand_pose, &shape);
        let cfg = AggregationConfig {
            n: 1,
            k_vis_hand: 1,
            k_vis_obj_t: 1,
            k_vis_obj_r: 1,
            k_phy_hand: 1,
            k_phy_obj: 1,
            ..Default::default()
        };
        let (res, retained) =
            visual_aggregate_hand(&[sc.hand_pose], &stack, &camera(), &shape, &cfg).unwrap();
        for j in 0..crate::hand::NUM_JOINTS {
            assert_relative_eq!(
                res.pose.rotations[j].0,
                sc.hand_pose.rotations[j].canonicalized().0,
                epsilon = 1e-12
            );
        }
        assert_eq!(res.k4, vec![0]);
        assert_eq!(retained.len(), 1);
    }

    #[test]
    fn level_order_reversal_changes_output() {
        // Asymmetric set: candidate 0 has the true wrist but a bent index
        // DIP; candidate 1 has the true DIP under a badly rotated wrist.
        // Forward order fixes the wrist before scoring the distal level,
        // so candidate 1's DIP wins; scored under its own wrist it loses.
        let sc = pinch();
        let shape = HandShape::default();
        let stack = render_hand_heatmaps(&sc.hand_pose, &shape);
        let mut bent_dip = sc.hand_pose;
        bent_dip.rotations[3] = RotationAA(bent_dip.rotations[3].0 + Vec3::new(0.0, 0.0, 0.35));
        let mut bent_wrist = sc.hand_pose;
        bent_wrist.rotations[0] =
            RotationAA(bent_wrist.rotations[0].canonicalized().0 + Vec3::new(0.4, 0.2, 0.0));
        let cands = vec![bent_dip, bent_wrist];
        let cfg = AggregationConfig {
            n: 2,
            k_vis_hand: 1,
            k_phy_hand: 1,
            ..Default::default()
        };
        let (forward, _) =
            visual_aggregate_hand(&cands, &stack, &camera(), &shape, &cfg).unwrap();

        // Reverse-order reimplementation from the same primitives.
        let hierarchy = joint_hierarchy();
        let mut work = cands.clone();
        for joints in hierarchy.levels.iter().rev() {
            let scores =
                hand_level_scores(&work, joints, &hierarchy, &stack, &camera(), &shape).unwrap();
            aggregate_hand_level(&mut work, joints, &scores, 1).unwrap();
        }
        let reversed = work[0];
        let diff: f64 = (0..crate::hand::NUM_JOINTS)
            .map(|j| (forward.pose.rotations[j].0 - reversed.rotations[j].0).norm())
            .sum();
        assert!(
            diff > 1e-6,
            "reverse level order unexpectedly matched ({diff})"
        );
    }

    #[test]
    fn object_gt_candidates_recover_gt() {
        let sc = pinch();
        let keypoints27 = crate::mesh::bbox_keypoints_27(&sc.object_mesh);
        let stack =
            render_object_heatmaps(&sc.object_rotation, &sc.object_translation, &keypoints27);
        let cands = vec![(sc.object_rotation, sc.object_translation); 6];
        let cfg = AggregationConfig {
            n: 6,
            k_vis_hand: 3,
            k_vis_obj_t: 3,
            k_vis_obj_r: 3,
            k_phy_hand: 2,
            k_phy_obj: 2,
            ..Default::default()
        };
        let res =
            visual_aggregate_object(&cands, &keypoints27, &stack, &camera(), &cfg).unwrap();
        assert_relative_eq!(res.translation, sc.object_translation, epsilon = 1e-9);
        assert_relative_eq!(res.rotation, sc.object_rotation, epsilon = 1e-9);
    }

    #[test]
    fn translation_aggregation_improves_over_mean_candidate() {
        let sc = pinch();
        let keypoints27 = crate::mesh::bbox_keypoints_27(&sc.object_mesh);
        let stack =
            render_object_heatmaps(&sc.object_rotation, &sc.object_translation, &keypoints27);
        let spec = PerturbSpec {
            rot_sigma: 0.0,
            trans_sigma: 0.01,
            include_reference: false,
        };
        let noisy = object_candidates(&sc.object_rotation, &sc.object_translation, &spec, 19, 3);
        let mut cands = vec![(sc.object_rotation, sc.object_translation)];
        cands.extend(noisy);
        let cfg = AggregationConfig {
            n: cands.len(),
            k_vis_hand: 5,
            k_vis_obj_t: 5,
            k_vis_obj_r: 5,
            k_phy_hand: 2,
            k_phy_obj: 2,
            ..Default::default()
        };
        let res =
            visual_aggregate_object(&cands, &keypoints27, &stack, &camera(), &cfg).unwrap();
        let mean_err: f64 = cands
            .iter()
            .map(|(_, t)| (t - sc.object_translation).norm())
            .sum::<f64>()
            / cands.len() as f64;
        let got = (res.translation - sc.object_translation).norm();
        assert!(
            got <= mean_err,
            "aggregated {got} vs mean candidate {mean_err}"
        );
    }

    #[test]
    fn chordal_mean_of_opposed_rotations_is_geodesic_midpoint() {
        for deg in [5.0_f64, 15.0, 30.0] {
            let alpha = deg.to_radians();
            let base = aa_to_matrix(RotationAA(Vec3::new(0.3, -0.2, 0.5)));
            let axis = Vec3::new(0.0, 0.0, 1.0);
            let plus = base * aa_to_matrix(RotationAA(axis * alpha));
            let minus = base * aa_to_matrix(RotationAA(axis * -alpha));
            let mean = chordal_mean(&[plus, minus], Some(&[1.0, 1.0])).unwrap();
            assert_relative_eq!(mean, base, epsilon = 1e-6);
        }
    }

    #[test]
    fn physics_hand_selection_matches_score_oracle() {
        let sc = pinch();
        let model = HandModel::new(HandShape::default());
        let spec = PerturbSpec {
            rot_sigma: 0.05,
            trans_sigma: 0.0,
            include_reference: false,
        };
        let retained = hand_candidates(&sc.hand_pose, &spec, 8, 5);
        let posed = sc
            .object_mesh
            .transformed(&sc.object_rotation, &sc.object_translation);
        let query = SdfQuery::new(&posed);
        let gravity = Gravity::new(sc.gravity).unwrap();
        let cfg = AggregationConfig {
            n: 8,
            k_vis_hand: 8,
            k_phy_hand: 3,
            ..Default::default()
        };
        let mut final_pose = sc.hand_pose;
        let res = physics_aggregate_hand(
            &retained,
            &mut final_pose,
            &model,
            &query,
            posed.centroid(),
            gravity,
            &cfg,
        )
        .unwrap();
        assert!(res.applied);
        // Recompute scores independently and check the ranking.
        let oracle: Vec<f64> = retained
            .iter()
            .map(|pose| {
                let (r, _) =
                    solve_candidate(&model, pose, &query, posed.centroid(), gravity, &cfg)
                        .unwrap();
                hand_phys_score(&r)
            })
            .collect();
        let expect = top_k(&oracle, 3).unwrap();
        assert_eq!(res.selected, expect);
        for (got, want) in res.scores.iter().zip(&oracle) {
            assert_relative_eq!(got.unwrap(), *want, epsilon = 1e-9);
        }
        // Selected scores dominate every discarded one.
        let worst_sel = res
            .selected
            .iter()
            .map(|&i| oracle[i])
            .fold(f64::INFINITY, f64::min);
        for (i, &s) in oracle.iter().enumerate() {
            if !res.selected.contains(&i) {
                assert!(s <= worst_sel);
            }
        }
    }

    #[test]
    fn physics_hand_all_frozen_keeps_visual_result() {
        let sc = build_canonical(TemplateId::HoverNoContact, 7).unwrap();
        let model = HandModel::new(HandShape::default());
        let posed = sc
            .object_mesh
            .transformed(&sc.object_rotation, &sc.object_translation);
        let query = SdfQuery::new(&posed);
        let cfg = AggregationConfig {
            n: 3,
            k_vis_hand: 3,
            k_phy_hand: 2,
            ..Default::default()
        };
        let retained = vec![sc.hand_pose; 3];
        let mut final_pose = sc.hand_pose;
        let before = final_pose;
        let res = physics_aggregate_hand(
            &retained,
            &mut final_pose,
            &model,
            &query,
            posed.centroid(),
            Gravity::new(sc.gravity).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(!res.applied);
        assert!(res.scores.iter().all(|s| s.is_none()));
        for j in 0..crate::hand::NUM_JOINTS {
            assert_relative_eq!(
                final_pose.rotations[j].0,
                before.rotations[j].0,
                epsilon = 0.0
            );
        }
    }

    #[test]
    fn physics_object_pair_semantics() {
        let sc = pinch();
        let model = HandModel::new(HandShape::default());
        let posed = sc
            .object_mesh
            .transformed(&sc.object_rotation, &sc.object_translation);
        let report = solve_pseudo_forces(
            &model,
            &sc.hand_pose,
            &posed,
            Gravity::new(sc.gravity).unwrap(),
            &SolverConfig::default(),
        )
        .unwrap();
        let spec = PerturbSpec {
            rot_sigma: 0.1,
            trans_sigma: 0.005,
            include_reference: false,
        };
        let noisy = object_candidates(&sc.object_rotation, &sc.object_translation, &spec, 4, 9);
        let retained_t: Vec<Vec3> = noisy.iter().map(|(_, t)| *t).collect();
        let retained_r: Vec<Mat3> = noisy.iter().take(3).map(|(r, _)| *r).collect();
        let cfg = AggregationConfig {
            k_phy_obj: 2,
            ..Default::default()
        };
        let (_, _, res) = physics_aggregate_object(
            &retained_t,
            &retained_r,
            &report.force_field,
            &sc.object_mesh,
            &cfg,
        )
        .unwrap();
        assert_eq!(res.scores.len(), retained_t.len() * retained_r.len());
        assert_eq!(res.selected.len(), 2);
        let worst_sel = res
            .selected
            .iter()
            .map(|&i| res.scores[i])
            .fold(f64::INFINITY, f64::min);
        for (i, &s) in res.scores.iter().enumerate() {
            if !res.selected.contains(&i) {
                assert!(s <= worst_sel);
            }
        }

        // Singleton sets pass the single pair straight through.
        let (r1, t1, res1) = physics_aggregate_object(
            &retained_t[..1],
            &retained_r[..1],
            &report.force_field,
            &sc.object_mesh,
            &AggregationConfig {
                k_phy_obj: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(res1.scores.len(), 1);
        assert_relative_eq!(t1, retained_t[0], epsilon = 1e-12);
        assert_relative_eq!(r1, retained_r[0], epsilon = 1e-9);
    }

    fn pipeline_fixture() -> (
        crate::scenario::Scenario,
        HandModel,
        Vec<HandPose>,
        Vec<(Mat3, Vec3)>,
        HeatmapStack,
        HeatmapStack,
    ) {
        let sc = pinch();
        let model = HandModel::new(HandShape::default());
        let hand_spec = PerturbSpec {
            rot_sigma: 0.04,
            trans_sigma: 0.0,
            include_reference: false,
        };
        let obj_spec = PerturbSpec {
            rot_sigma: 0.05,
            trans_sigma: 0.004,
            include_reference: false,
        };
        let hands = hand_candidates(&sc.hand_pose, &hand_spec, 12, 21);
        let objects =
            object_candidates(&sc.object_rotation, &sc.object_translation, &obj_spec, 12, 22);
        let hand_hm = render_hand_heatmaps(&sc.hand_pose, &model.shape);
        let keypoints27 = crate::mesh::bbox_keypoints_27(&sc.object_mesh);
        let obj_hm =
            render_object_heatmaps(&sc.object_rotation, &sc.object_translation, &keypoints27);
        (sc, model, hands, objects, hand_hm, obj_hm)
    }

    fn small_cfg() -> AggregationConfig {
        AggregationConfig {
            n: 12,
            k_vis_hand: 6,
            k_vis_obj_t: 4,
            k_vis_obj_r: 4,
            k_phy_hand: 3,
            k_phy_obj: 3,
            ..Default::default()
        }
    }

    #[test]
    fn full_pipeline_deterministic_and_ablation_parity() {
        let (sc, model, hands, objects, hand_hm, obj_hm) = pipeline_fixture();
        let cam = camera();
        let input = AggregationInput {
            model: &model,
            object_mesh: &sc.object_mesh,
            gravity: Gravity::new(sc.gravity).unwrap(),
            camera: &cam,
            hand_heatmaps: &hand_hm,
            object_heatmaps: &obj_hm,
        };
        let cfg = small_cfg();
        let a = aggregate_full(&input, &hands, &objects, &cfg).unwrap();
        let b = aggregate_full(&input, &hands, &objects, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        a.validate().unwrap();
        assert!(a.hand_physics.as_ref().unwrap().applied);

        // Disabling the physics stage reproduces the visual-only output.
        let cfg_va = AggregationConfig {
            enable_physics: false,
            ..small_cfg()
        };
        let va = aggregate_full(&input, &hands, &objects, &cfg_va).unwrap();
        assert!(va.hand_physics.is_none() && va.object_physics.is_none());
        assert_eq!(
            serde_json::to_string(&va.final_hand).unwrap(),
            serde_json::to_string(&a.hand_visual.pose).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&va.final_object_translation).unwrap(),
            serde_json::to_string(&a.object_visual.translation).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&va.final_object_rotation).unwrap(),
            serde_json::to_string(&a.object_visual.rotation).unwrap()
        );
    }

    #[test]
    fn heatmap_scale_leaves_selections_unchanged() {
        let (sc, model, hands, objects, hand_hm, obj_hm) = pipeline_fixture();
        let cam = camera();
        let cfg = small_cfg();
        let run = |h: &HeatmapStack, o: &HeatmapStack| {
            let input = AggregationInput {
                model: &model,
                object_mesh: &sc.object_mesh,
                gravity: Gravity::new(sc.gravity).unwrap(),
                camera: &cam,
                hand_heatmaps: h,
                object_heatmaps: o,
            };
            aggregate_full(&input, &hands, &objects, &cfg).unwrap()
        };
        let base = run(&hand_hm, &obj_hm);
        // Values stay within [0, 1] for lambda < 1, so no clamping bites.
        let scaled = run(&hand_hm.scaled(0.5), &obj_hm.scaled(0.5));
        for (lb, ls) in base.hand_visual.levels.iter().zip(&scaled.hand_visual.levels) {
            for (jb, js) in lb.joints.iter().zip(&ls.joints) {
                assert_eq!(jb.selected, js.selected);
            }
        }
        assert_eq!(base.hand_visual.k4, scaled.hand_visual.k4);
        assert_eq!(base.object_visual.t_selected, scaled.object_visual.t_selected);
        assert_eq!(base.object_visual.r_selected, scaled.object_visual.r_selected);
        // Weighted means are scale-invariant, so the finals agree too.
        assert_relative_eq!(
            base.final_object_translation,
            scaled.final_object_translation,
            epsilon = 1e-9
        );
    }

    #[test]
    fn candidate_permutation_only_moves_indices() {
        let (sc, model, hands, objects, hand_hm, obj_hm) = pipeline_fixture();
        let cam = camera();
        let cfg = small_cfg();
        let input = AggregationInput {
            model: &model,
            object_mesh: &sc.object_mesh,
            gravity: Gravity::new(sc.gravity).unwrap(),
            camera: &cam,
            hand_heatmaps: &hand_hm,
            object_heatmaps: &obj_hm,
        };
        let base = aggregate_full(&input, &hands, &objects, &cfg).unwrap();
        let mut hands_rev = hands.clone();
        hands_rev.reverse();
        let mut objects_rev = objects.clone();
        objects_rev.reverse();
        let perm = aggregate_full(&input, &hands_rev, &objects_rev, &cfg).unwrap();
        // Perturbed candidates have distinct scores (no ties), so the
        // aggregated poses must agree up to floating-point summation
        // order in the weighted means.
        for j in 0..crate::hand::NUM_JOINTS {
            assert_relative_eq!(
                base.final_hand.rotations[j].0,
                perm.final_hand.rotations[j].0,
                epsilon = 1e-9
            );
        }
        assert_relative_eq!(
            base.final_object_translation,
            perm.final_object_translation,
            epsilon = 1e-9
        );
    }

    #[test]
    fn aggregation_improves_hand_mje_on_noisy_candidates() {
        let (sc, model, hands, _, hand_hm, _) = pipeline_fixture();
        let cam = camera();
        let cfg = small_cfg();
        let shape = &model.shape;
        let gt = forward_kinematics(&sc.hand_pose, shape);
        let mje = |pose: &HandPose| -> f64 {
            let kp = forward_kinematics(pose, shape);
            kp.iter()
                .zip(&gt)
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / kp.len() as f64
        };
        let (res, _) =
            visual_aggregate_hand(&hands, &hand_hm, &cam, shape, &cfg).unwrap();
        let mean_mje = hands.iter().map(|p| mje(p)).sum::<f64>() / hands.len() as f64;
        let got = mje(&res.pose);
        assert!(
            got <= mean_mje,
            "aggregated MJE {got} vs mean candidate {mean_mje}"
        );
    }

    #[test]
    fn report_schema_round_trip() {
        let (sc, model, hands, objects, hand_hm, obj_hm) = pipeline_fixture();
        let cam = camera();
        let input = AggregationInput {
            model: &model,
            object_mesh: &sc.object_mesh,
            gravity: Gravity::new(sc.gravity).unwrap(),
            camera: &cam,
            hand_heatmaps: &hand_hm,
            object_heatmaps: &obj_hm,
        };
        let report = aggregate_full(&input, &hands, &objects, &small_cfg()).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: AggregationReport = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert_eq!(json, serde_json::to_string(&back).unwrap());
        let mut bad = back;
        bad.schema = "aggregation.v9".into();
        assert!(matches!(bad.validate(), Err(Error::VersionError { .. })));
    }
}
