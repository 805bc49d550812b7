//! Deterministic synthetic grasp scenarios. Each template poses the
//! hand first, reads the resulting contact-pad anchors off the skinned
//! mesh, then constructs and places the object to fit them, so grasp
//! templates are feasible by construction. The camera frame is the world
//! frame; gravity points along camera +y.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{AnchorFrame, Gravity};
use crate::geom::{aa_to_matrix, matrix_to_aa, CameraIntrinsics, Mat3, RotationAA, Vec3};
use crate::hand::{anchor_states, AnchorTable, HandModel, HandPose, HandShape};
use crate::mesh::{make_box, make_cylinder, make_sphere, TriMesh};

pub const SCENARIO_SCHEMA: &str = "scenario.v1";
/// Scene depth the object center is placed at, meters in front of the camera.
const SCENE_DEPTH: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateId {
    PinchSphere,
    TripodSphere,
    WrapCylinder,
    PalmBox,
    HoverNoContact,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::PinchSphere,
        TemplateId::TripodSphere,
        TemplateId::WrapCylinder,
        TemplateId::PalmBox,
        TemplateId::HoverNoContact,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TemplateId::PinchSphere => "pinch-sphere",
            TemplateId::TripodSphere => "tripod-sphere",
            TemplateId::WrapCylinder => "wrap-cylinder",
            TemplateId::PalmBox => "palm-box",
            TemplateId::HoverNoContact => "hover-no-contact",
        }
    }
}

impl std::str::FromStr for TemplateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    pub template: TemplateId,
    pub seed: u64,
    /// Object mesh in its own frame; pose maps it into the camera frame.
    pub object_mesh: TriMesh,
    pub object_rotation: Mat3,
    pub object_translation: Vec3,
    pub hand_shape: HandShape,
    pub hand_pose: HandPose,
    /// Unit gravity direction in the camera frame.
    pub gravity: Vec3,
    pub camera: CameraIntrinsics,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::VersionError {
                expected: SCENARIO_SCHEMA.into(),
                got: self.schema.clone(),
            });
        }
        self.camera.validate()?;
        if (self.gravity.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::SchemaError("gravity direction not unit length".into()));
        }
        if self.object_translation.z <= 0.0 {
            return Err(Error::SchemaError("object behind the camera".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(s: &str) -> Result<Scenario> {
        // surface the schema string first so a version mismatch is not
        // masked by unrelated field errors
        #[derive(Deserialize)]
        struct Head {
            schema: String,
        }
        if let Ok(head) = serde_json::from_str::<Head>(s) {
            if head.schema != SCENARIO_SCHEMA {
                return Err(Error::VersionError {
                    expected: SCENARIO_SCHEMA.into(),
                    got: head.schema,
                });
            }
        }
        let scenario: Scenario =
            serde_json::from_str(s).map_err(|e| Error::SchemaError(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// The object mesh transformed into the camera frame.
    pub fn posed_object_mesh(&self) -> TriMesh {
        self.object_mesh
            .transformed(&self.object_rotation, &self.object_translation)
    }

    pub fn gravity(&self) -> Gravity {
        Gravity::new(self.gravity).expect("validated unit direction")
    }

    /// Anchor states of the ground-truth posed hand.
    pub fn hand_anchors(&self) -> Result<Vec<AnchorFrame>> {
        let model = HandModel::new(self.hand_shape);
        let mesh = model.skin_mesh(&self.hand_pose);
        anchor_states(&mesh, AnchorTable::builtin())
    }
}

/// Anchor indices: 4 pads per digit in order (proximal, middle, distal,
/// tip) for index, middle, pinky, ring, thumb, then 12 palm anchors.
pub const INDEX_TIP_PAD: usize = 3;
pub const MIDDLE_TIP_PAD: usize = 7;
pub const THUMB_TIP_PAD: usize = 19;
pub const PALM_ANCHORS: std::ops::Range<usize> = 20..32;

fn flex(j: f64) -> RotationAA {
    // rotation about -x curls the finger toward the palmar side (-z)
    RotationAA(Vec3::new(-j, 0.0, 0.0))
}

fn rot_y(j: f64) -> RotationAA {
    RotationAA(Vec3::new(0.0, j, 0.0))
}

/// Rotation carrying `from` onto `to` (both need not be unit).
fn rotation_to(from: &Vec3, to: &Vec3) -> Mat3 {
    match Rotation3::rotation_between(from, to) {
        Some(r) => r.into_inner(),
        None => {
            // antiparallel: pick any perpendicular axis
            let axis = if from.x.abs() < 0.9 {
                Vec3::x().cross(from).normalize()
            } else {
                Vec3::y().cross(from).normalize()
            };
            aa_to_matrix(RotationAA(axis * std::f64::consts::PI))
        }
    }
}

struct PosedHand {
    pose: HandPose,
    anchors: Vec<AnchorFrame>,
}

fn pose_hand(shape: &HandShape, rotations: &[(usize, RotationAA)]) -> Result<PosedHand> {
    let mut pose = HandPose::identity();
    for &(j, r) in rotations {
        pose.rotations[j] = r;
    }
    let model = HandModel::new(*shape);
    let mesh = model.skin_mesh(&pose);
    let anchors = anchor_states(&mesh, AnchorTable::builtin())?;
    Ok(PosedHand { pose, anchors })
}

/// Sets the wrist rotation so the hand-frame direction `support_dir`
/// (the central achievable force direction of the grasp) opposes
/// gravity, and the translation so `focus_hand` lands at the scene
/// center. Returns the world-frame focus point.
fn orient_and_place(
    pose: &mut HandPose,
    support_dir: Vec3,
    focus_hand: Vec3,
    gravity: Vec3,
) -> Vec3 {
    let up = -gravity;
    let r_w = rotation_to(&support_dir, &up);
    pose.rotations[0] = matrix_to_aa(&r_w);
    let focus_world = Vec3::new(0.0, 0.0, SCENE_DEPTH);
    pose.wrist_translation = focus_world - r_w * focus_hand;
    focus_world
}

fn normal_of(a: &AnchorFrame) -> Vec3 {
    a.frame.column(2).into()
}

fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 128.0,
        cy: 128.0,
        width: 256,
        height: 256,
    }
}

const GRAVITY_DIR: Vec3 = Vec3::new(0.0, 1.0, 0.0);

/// Builds the deterministic canonical scenario for a template. The seed
/// is recorded for downstream stages; construction itself is fixed.
pub fn build_canonical(template: TemplateId, seed: u64) -> Result<Scenario> {
    let shape = HandShape::default();
    let (pose, mesh, rotation, translation) = match template {
        TemplateId::PinchSphere => pinch_sphere(&shape)?,
        TemplateId::TripodSphere => tripod_sphere(&shape)?,
        TemplateId::WrapCylinder => wrap_cylinder(&shape)?,
        TemplateId::PalmBox => palm_box(&shape)?,
        TemplateId::HoverNoContact => hover(&shape)?,
    };
    let scenario = Scenario {
        schema: SCENARIO_SCHEMA.into(),
        name: template.name().into(),
        template,
        seed,
        object_mesh: mesh,
        object_rotation: rotation,
        object_translation: translation,
        hand_shape: shape,
        hand_pose: pose,
        gravity: GRAVITY_DIR,
        camera: default_camera(),
    };
    scenario.validate()?;
    Ok(scenario)
}

type Placed = (HandPose, TriMesh, Mat3, Vec3);

/// Thumb and index tip pads straddle a small sphere; the other digits
/// curl tightly out of the way.
fn pinch_sphere(shape: &HandShape) -> Result<Placed> {
    let curl = [
        // index: moderate curl past vertical so the pad faces the thumb
        (1, flex(0.9)),
        (2, flex(0.8)),
        (3, flex(0.5)),
        // middle, pinky, ring: full curl away from the pinch site
        (4, flex(1.5)),
        (5, flex(1.4)),
        (6, flex(1.0)),
        (7, flex(1.5)),
        (8, flex(1.4)),
        (9, flex(1.0)),
        (10, flex(1.5)),
        (11, flex(1.4)),
        (12, flex(1.0)),
        // thumb: swing under the index
        (13, rot_y(0.9)),
        (14, RotationAA(Vec3::new(-0.3, 0.4, 0.0))),
        (15, RotationAA(Vec3::new(-0.3, 0.2, 0.0))),
    ];
    let posed = pose_hand(shape, &curl)?;
    let (pi, ni) = (
        posed.anchors[INDEX_TIP_PAD].position,
        normal_of(&posed.anchors[INDEX_TIP_PAD]),
    );
    let (pt, nt) = (
        posed.anchors[THUMB_TIP_PAD].position,
        normal_of(&posed.anchors[THUMB_TIP_PAD]),
    );
    let center = (pi + pt) * 0.5;
    let radius = (pt - pi).norm() * 0.5;
    let mut pose = posed.pose;
    let focus = orient_and_place(&mut pose, (ni + nt).normalize(), center, GRAVITY_DIR);
    let mesh = make_sphere(radius, 3)?;
    Ok((pose, mesh, Mat3::identity(), focus))
}

/// Thumb, index, and middle tip pads on a sphere through all three,
/// offset to the palmar side; ring and pinky curl away.
fn tripod_sphere(shape: &HandShape) -> Result<Placed> {
    let curl = [
        (1, flex(0.7)),
        (2, flex(0.7)),
        (3, flex(0.4)),
        (4, flex(0.7)),
        (5, flex(0.7)),
        (6, flex(0.4)),
        // pinky, ring out of the way
        (7, flex(1.6)),
        (8, flex(1.4)),
        (9, flex(1.0)),
        (10, flex(1.6)),
        (11, flex(1.4)),
        (12, flex(1.0)),
        // thumb under the index/middle gap
        (13, rot_y(1.0)),
        (14, RotationAA(Vec3::new(-0.3, 0.3, 0.0))),
        (15, RotationAA(Vec3::new(-0.3, 0.2, 0.0))),
    ];
    let posed = pose_hand(shape, &curl)?;
    let pads = [INDEX_TIP_PAD, MIDDLE_TIP_PAD, THUMB_TIP_PAD];
    let pts: Vec<Vec3> = pads.iter().map(|&k| posed.anchors[k].position).collect();
    let mean_n: Vec3 = pads
        .iter()
        .map(|&k| normal_of(&posed.anchors[k]))
        .sum::<Vec3>()
        .normalize();
    // circumcenter of the pad triangle, offset along the mean pad normal
    let (a, b, c) = (pts[0], pts[1], pts[2]);
    let ab = b - a;
    let ac = c - a;
    let n = ab.cross(&ac);
    let cc = a
        + (ab.norm_squared() * ac.norm_squared() * (ab - ac).norm_squared()).sqrt() * Vec3::zeros()
        // standard circumcenter formula
        + (ac.norm_squared() * n.cross(&-ab) + ab.norm_squared() * ac.cross(&n))
            / (2.0 * n.norm_squared());
    let rho = (cc - a).norm();
    let plane_n = if n.dot(&mean_n) > 0.0 { n.normalize() } else { -n.normalize() };
    let h = 0.5 * rho;
    let center = cc + h * plane_n;
    let radius = (rho * rho + h * h).sqrt();
    let mut pose = posed.pose;
    let focus = orient_and_place(&mut pose, mean_n, center, GRAVITY_DIR);
    let mesh = make_sphere(radius, 3)?;
    Ok((pose, mesh, Mat3::identity(), focus))
}

/// Four fingers curl around a cylinder whose axis runs across the palm;
/// the axis and radius are fitted to the curled finger pads.
fn wrap_cylinder(shape: &HandShape) -> Result<Placed> {
    let curl = [
        (1, flex(1.0)),
        (2, flex(1.0)),
        (3, flex(0.6)),
        (4, flex(1.0)),
        (5, flex(1.0)),
        (6, flex(0.6)),
        (7, flex(1.0)),
        (8, flex(1.0)),
        (9, flex(0.6)),
        (10, flex(1.0)),
        (11, flex(1.0)),
        (12, flex(0.6)),
        (13, rot_y(1.1)),
        (14, RotationAA(Vec3::new(-0.4, 0.3, 0.0))),
        (15, RotationAA(Vec3::new(-0.4, 0.2, 0.0))),
    ];
    let posed = pose_hand(shape, &curl)?;
    // fit a circle in the y-z plane (axis along hand x) to the mid and
    // distal pads of the four fingers
    let fit_pads = [1usize, 2, 5, 6, 9, 10, 13, 14];
    let pts: Vec<Vec3> = fit_pads.iter().map(|&k| posed.anchors[k].position).collect();
    let (mut cy, mut cz) = (0.0, 0.0);
    for p in &pts {
        cy += p.y;
        cz += p.z;
    }
    cy /= pts.len() as f64;
    cz /= pts.len() as f64;
    // a few fixed-point refinements of the mean-distance circle fit
    let mut radius = 0.0;
    for _ in 0..32 {
        radius = pts
            .iter()
            .map(|p| ((p.y - cy).powi(2) + (p.z - cz).powi(2)).sqrt())
            .sum::<f64>()
            / pts.len() as f64;
        let (mut gy, mut gz) = (0.0, 0.0);
        for p in &pts {
            let d = ((p.y - cy).powi(2) + (p.z - cz).powi(2)).sqrt().max(1e-9);
            gy += p.y - (p.y - cy) / d * radius;
            gz += p.z - (p.z - cz) / d * radius;
        }
        cy = gy / pts.len() as f64;
        cz = gz / pts.len() as f64;
    }
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / pts.len() as f64;
    let center = Vec3::new(cx, cy, cz);
    let mean_n: Vec3 = fit_pads
        .iter()
        .map(|&k| normal_of(&posed.anchors[k]))
        .sum::<Vec3>()
        .normalize();
    let mut pose = posed.pose;
    let focus = orient_and_place(&mut pose, mean_n, center, GRAVITY_DIR);
    // cylinder mesh axis is +z in its own frame; rotate it onto the
    // world image of the hand x axis
    let axis_world = aa_to_matrix(pose.rotations[0]) * Vec3::x();
    let rotation = rotation_to(&Vec3::z(), &axis_world);
    let mesh = make_cylinder(radius, 0.10, 3)?;
    Ok((pose, mesh, rotation, focus))
}

/// A box rests on the upturned palm; fingers stay extended beyond its
/// footprint.
fn palm_box(shape: &HandShape) -> Result<Placed> {
    let posed = pose_hand(shape, &[])?;
    let palm: Vec<&AnchorFrame> = PALM_ANCHORS.map(|k| &posed.anchors[k]).collect();
    let centroid: Vec3 = palm.iter().map(|a| a.position).sum::<Vec3>() / palm.len() as f64;
    let mean_n: Vec3 = palm.iter().map(|a| normal_of(a)).sum::<Vec3>().normalize();
    let dims = Vec3::new(0.05, 0.04, 0.04);
    // rest the box face on the mean palm plane: center sits half a height
    // along the palm normal
    let center = centroid + mean_n * (dims.y * 0.5);
    let mut pose = posed.pose;
    let focus = orient_and_place(&mut pose, mean_n, center, GRAVITY_DIR);
    let r_w = aa_to_matrix(pose.rotations[0]);
    // box local y axis along the palm normal so the contact face is flat
    let rotation = r_w * rotation_to(&Vec3::y(), &mean_n);
    let mesh = make_box(dims.x, dims.y, dims.z)?;
    Ok((pose, mesh, rotation, focus))
}

/// Open rest hand with the object well out of reach.
fn hover(shape: &HandShape) -> Result<Placed> {
    let posed = pose_hand(shape, &[])?;
    let mut pose = posed.pose;
    // palm up, object floating far above the fingertips
    let mean_n: Vec3 = PALM_ANCHORS
        .map(|k| normal_of(&posed.anchors[k]))
        .sum::<Vec3>()
        .normalize();
    let centroid: Vec3 = PALM_ANCHORS
        .map(|k| posed.anchors[k].position)
        .sum::<Vec3>()
        / 12.0;
    let center = centroid + mean_n * 0.22;
    let focus = orient_and_place(&mut pose, mean_n, center, GRAVITY_DIR);
    let mesh = make_sphere(0.03, 3)?;
    Ok((pose, mesh, Mat3::identity(), focus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SdfQuery;
    use crate::physics::{contact_likelihood, OmegaConfig};
    use crate::solve::{init_coefficients, SolverConfig};

    fn anchor_distances(s: &Scenario) -> Vec<f64> {
        let anchors = s.hand_anchors().unwrap();
        let query = SdfQuery::new(&s.posed_object_mesh());
        anchors
            .iter()
            .map(|a| query.signed_distance(&a.position).distance)
            .collect()
    }

    #[test]
    fn templates_build_and_validate() {
        for t in TemplateId::ALL {
            let s = build_canonical(t, 7).unwrap();
            s.validate().unwrap();
            assert_eq!(s.template, t);
            assert_eq!(s.seed, 7);
            assert!(s.object_translation.z > 0.0);
        }
    }

    #[test]
    fn unknown_template_string() {
        assert!(matches!(
            "pinch-cube".parse::<TemplateId>(),
            Err(Error::UnknownTemplate(_))
        ));
        assert_eq!(
            "wrap-cylinder".parse::<TemplateId>().unwrap(),
            TemplateId::WrapCylinder
        );
    }

    #[test]
    fn pinch_contacts_are_thumb_and_index_pads() {
        let s = build_canonical(TemplateId::PinchSphere, 0).unwrap();
        let d = anchor_distances(&s);
        for (k, dk) in d.iter().enumerate() {
            let near = dk.abs() < 0.005;
            let allowed = (0..4).contains(&k) || (16..20).contains(&k);
            if near {
                assert!(allowed, "anchor {k} unexpectedly within 5 mm (d = {dk})");
            }
        }
        assert!(d[INDEX_TIP_PAD].abs() < 0.005, "index pad d = {}", d[INDEX_TIP_PAD]);
        assert!(d[THUMB_TIP_PAD].abs() < 0.005, "thumb pad d = {}", d[THUMB_TIP_PAD]);
        // contact normals oppose in the squeeze plane; both also carry a
        // shared upward component that supports the object against gravity
        let anchors = s.hand_anchors().unwrap();
        let strip = |n: Vec3| n - n.dot(&s.gravity) * s.gravity;
        let dot = strip(normal_of(&anchors[INDEX_TIP_PAD]))
            .normalize()
            .dot(&strip(normal_of(&anchors[THUMB_TIP_PAD])).normalize());
        assert!(dot < -0.5, "contact normals not opposing (squeeze dot = {dot})");
    }

    #[test]
    fn grasp_templates_have_contacts_and_hover_has_none() {
        let omega = OmegaConfig::default();
        for t in TemplateId::ALL {
            let s = build_canonical(t, 0).unwrap();
            let d = anchor_distances(&s);
            let unfrozen = d
                .iter()
                .filter(|&&dk| contact_likelihood(dk, &omega) >= 0.1)
                .count();
            if t == TemplateId::HoverNoContact {
                assert_eq!(unfrozen, 0, "hover scenario has contacts");
                assert!(d.iter().all(|&dk| dk >= 0.10), "hover anchor closer than 10 cm");
            } else {
                assert!(unfrozen >= 2, "{}: only {unfrozen} contact anchors", t.name());
            }
        }
    }

    #[test]
    fn grasp_contacts_within_one_centimeter() {
        for t in TemplateId::ALL {
            if t == TemplateId::HoverNoContact {
                continue;
            }
            let s = build_canonical(t, 0).unwrap();
            let d = anchor_distances(&s);
            let near = d.iter().filter(|&&dk| dk.abs() <= 0.01).count();
            assert!(near >= 2, "{}: {near} anchors within 1 cm", t.name());
        }
    }

    #[test]
    fn canonical_scenarios_admit_equilibrium() {
        let cfg = SolverConfig::default();
        for t in [TemplateId::PinchSphere, TemplateId::TripodSphere] {
            let s = build_canonical(t, 0).unwrap();
            let report = crate::solve::solve_pseudo_forces(
                &HandModel::new(s.hand_shape),
                &s.hand_pose,
                &s.posed_object_mesh(),
                s.gravity(),
                &cfg,
            )
            .unwrap();
            assert!(
                report.residuals.force <= 1e-2,
                "{}: L_force = {}",
                t.name(),
                report.residuals.force
            );
            assert!(
                report.residuals.torque <= 1e-2,
                "{}: L_torque = {}",
                t.name(),
                report.residuals.torque
            );
        }
    }

    #[test]
    fn hover_freezes_every_anchor() {
        let s = build_canonical(TemplateId::HoverNoContact, 0).unwrap();
        let cfg = SolverConfig::default();
        let query = SdfQuery::new(&s.posed_object_mesh());
        let scene = crate::solve::build_scene(
            &HandModel::new(s.hand_shape),
            &s.hand_pose,
            &query,
            s.posed_object_mesh().centroid(),
            s.gravity(),
            &cfg,
        )
        .unwrap();
        let vars = init_coefficients(&scene.contact, &cfg);
        assert_eq!(vars.unfrozen_count(), 0);
        assert!(matches!(
            crate::solve::solve_pseudo_forces(
                &HandModel::new(s.hand_shape),
                &s.hand_pose,
                &s.posed_object_mesh(),
                s.gravity(),
                &cfg,
            ),
            Err(Error::AllAnchorsFrozen)
        ));
    }

    #[test]
    fn json_round_trip_and_schema_errors() {
        let s = build_canonical(TemplateId::PinchSphere, 3).unwrap();
        let json = s.to_json();
        let back = Scenario::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);

        // deterministic: same template + seed rebuilds the same JSON
        let again = build_canonical(TemplateId::PinchSphere, 3).unwrap();
        assert_eq!(again.to_json(), json);

        // version mismatch
        let wrong = json.replacen("scenario.v1", "scenario.v9", 1);
        assert!(matches!(
            Scenario::from_json(&wrong),
            Err(Error::VersionError { .. })
        ));

        // missing field named in the error
        let missing = json.replacen("\"gravity\":", "\"gravity_x\":", 1);
        match Scenario::from_json(&missing) {
            Err(Error::SchemaError(msg)) => assert!(msg.contains("gravity"), "message: {msg}"),
            other => panic!("expected SchemaError, got {other:?}"),
        }
    }
}
