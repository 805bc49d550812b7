//! Two-phase pseudo-force solver: phase 1 fits the cone weights so the
//! net contact force opposes gravity, phase 2 jointly refines weights and
//! scales against force, torque and contact-consistency terms. Built on a
//! self-contained Adam optimizer with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::{
    cone_basis, AnchorFrame, ForceCoefficients, FrictionConeBasis, GlobalForceField, Gravity,
};
use crate::geom::Vec3;
use crate::hand::{anchor_states, AnchorTable, HandModel, HandPose};
use crate::mesh::{SdfQuery, TriMesh};
use crate::physics::{
    contact_likelihood, contact_residual, ContactState, OmegaConfig, PhysicsResiduals,
    CONTACT2_EPSILON,
};

/// Optimization variables: raw weights (softmax rows), raw scales
/// (absolute value), and the per-anchor freeze mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReparamVars {
    pub w_tilde: Vec<Vec<f64>>,
    pub s_tilde: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl ReparamVars {
    pub fn unfrozen_count(&self) -> usize {
        self.frozen.iter().filter(|f| !**f).count()
    }

    /// Maps the raw variables to simplex weights and nonnegative scales.
    pub fn coefficients(&self) -> ForceCoefficients {
        ForceCoefficients {
            weights: self.w_tilde.iter().map(|row| softmax(row)).collect(),
            scales: self
                .s_tilde
                .iter()
                .zip(&self.frozen)
                .map(|(s, &frozen)| if frozen { 0.0 } else { s.abs() })
                .collect(),
        }
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub learning_rate: f64,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub weight_force: f64,
    pub weight_torque: f64,
    pub weight_contact2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub omega: OmegaConfig,
    /// Residual trace logging stride.
    pub log_interval: usize,
    pub mu: f64,
    pub n_v: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            learning_rate: 1e-3,
            phase1_steps: 300,
            phase2_steps: 2700,
            weight_force: 1.0,
            weight_torque: 30.0,
            weight_contact2: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            omega: OmegaConfig::default(),
            log_interval: 50,
            mu: 1.0,
            n_v: 12,
        }
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }
}

/// Standard bias-corrected Adam update, in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grad: &[f64],
    cfg: &SolverConfig,
) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    debug_assert_eq!(params.len(), grad.len());
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for i in 0..params.len() {
        let g = grad[i] + cfg.weight_decay * params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scene and objective

/// Frozen geometry a solve runs against: anchors with frames, cone basis,
/// gravity, and per-anchor distances. Distances are computed once from
/// the input pose and held fixed during optimization.
#[derive(Debug, Clone)]
pub struct SolveScene {
    pub anchors: Vec<AnchorFrame>,
    pub basis: FrictionConeBasis,
    pub gravity: Gravity,
    pub contact: ContactState,
    /// Contact likelihoods per anchor, precomputed from the distances.
    pub likelihood: Vec<f64>,
}

impl SolveScene {
    pub fn new(
        anchors: Vec<AnchorFrame>,
        basis: FrictionConeBasis,
        gravity: Gravity,
        contact: ContactState,
        omega_cfg: &OmegaConfig,
    ) -> Self {
        let likelihood = contact
            .distances
            .iter()
            .map(|&d| contact_likelihood(d, omega_cfg))
            .collect();
        SolveScene {
            anchors,
            basis,
            gravity,
            contact,
            likelihood,
        }
    }
}

/// Freeze rule: anchors with contact likelihood below 0.1 are fixed at
/// zero scale; the rest start at s_tilde = 0.05 with uniform raw weights.
pub const FREEZE_THRESHOLD: f64 = 0.1;

pub fn init_coefficients(contact: &ContactState, cfg: &SolverConfig) -> ReparamVars {
    let frozen: Vec<bool> = contact
        .distances
        .iter()
        .map(|&d| contact_likelihood(d, &cfg.omega) < FREEZE_THRESHOLD)
        .collect();
    ReparamVars {
        w_tilde: vec![vec![1.0 / cfg.n_v as f64; cfg.n_v]; contact.distances.len()],
        s_tilde: frozen
            .iter()
            .map(|&f| if f { 0.0 } else { 0.05 })
            .collect(),
        frozen,
    }
}

struct ObjectiveEval {
    residuals: PhysicsResiduals,
    objective: f64,
    grad_w: Vec<Vec<f64>>,
    grad_s: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    WeightsOnly,
    Joint,
}

/// Objective and analytic gradient with respect to the raw variables.
///
/// The force term is `|| sum_k F_k + G ||^2`: the optimum has the hand
/// force opposing gravity. Contact-consistency sums over unfrozen
/// anchors only; frozen anchors contribute no force by construction.
fn objective(vars: &ReparamVars, scene: &SolveScene, cfg: &SolverConfig, phase: Phase) -> ObjectiveEval {
    let n = vars.s_tilde.len();
    let n_v = cfg.n_v;
    let coeff = vars.coefficients();

    // forward pass
    let mut local_dirs: Vec<Vec3> = Vec::with_capacity(n); // u_k = sum_j w_kj v_j
    let mut forces: Vec<Vec3> = Vec::with_capacity(n);
    for k in 0..n {
        let u: Vec3 = coeff.weights[k]
            .iter()
            .zip(&scene.basis.vectors)
            .map(|(&w, v)| w * v)
            .sum();
        local_dirs.push(u);
        forces.push(scene.anchors[k].frame * (coeff.scales[k] * u));
    }
    let force_sum: Vec3 = forces.iter().sum();
    let e_force = force_sum + scene.gravity.vector();
    let l_force = e_force.norm_squared();

    let com = scene.contact.center_of_mass;
    let torque: Vec3 = forces
        .iter()
        .zip(&scene.anchors)
        .map(|(f, a)| f.cross(&(a.position - com)))
        .sum();
    let l_torque = torque.norm_squared();

    // contact-consistency over unfrozen anchors
    let s_norm_sq: f64 = (0..n)
        .filter(|&k| !vars.frozen[k])
        .map(|k| coeff.scales[k] * coeff.scales[k])
        .sum();
    let s_norm = s_norm_sq.sqrt();
    let o_norm: f64 = (0..n)
        .filter(|&k| !vars.frozen[k])
        .map(|k| scene.likelihood[k] * scene.likelihood[k])
        .sum::<f64>()
        .sqrt();
    let mut log_terms = vec![0.0; n];
    let mut l_contact2 = 0.0;
    for k in 0..n {
        if vars.frozen[k] {
            continue;
        }
        let ratio = scene.likelihood[k] * s_norm / (coeff.scales[k] * o_norm + CONTACT2_EPSILON);
        let a = ratio.ln();
        log_terms[k] = a;
        l_contact2 += a * a;
    }

    let field = GlobalForceField {
        positions: scene.anchors.iter().map(|a| a.position).collect(),
        forces: forces.clone(),
    };
    let l_contact = contact_residual(&field, &scene.contact);
    let residuals = PhysicsResiduals {
        force: l_force,
        torque: l_torque,
        contact: l_contact,
        contact2: l_contact2,
    };

    let (wf, wt, wc2) = match phase {
        Phase::WeightsOnly => (1.0, 0.0, 0.0),
        Phase::Joint => (cfg.weight_force, cfg.weight_torque, cfg.weight_contact2),
    };
    let objective_val = wf * l_force + wt * l_torque + wc2 * l_contact2;

    // backward pass
    let mut grad_w = vec![vec![0.0; n_v]; n];
    let mut grad_s = vec![0.0; n];
    let sum_a: f64 = log_terms.iter().sum();
    for k in 0..n {
        if vars.frozen[k] {
            continue;
        }
        let r_k = scene.anchors[k].position - com;
        // dL/dF_k
        let g_force: Vec3 =
            wf * 2.0 * e_force + wt * 2.0 * r_k.cross(&torque);
        let g_local = scene.anchors[k].frame.transpose() * g_force;

        // scale path: F'_k = s_k u_k, s_k = |s_tilde_k|
        let mut g_scale = g_local.dot(&local_dirs[k]);
        if wc2 > 0.0 {
            let s_k = coeff.scales[k];
            let mut g_c2 = 0.0;
            if s_norm > 0.0 {
                g_c2 += 2.0 * sum_a * s_k / s_norm_sq;
            }
            g_c2 -= 2.0 * log_terms[k] * o_norm / (s_k * o_norm + CONTACT2_EPSILON);
            g_scale += wc2 * g_c2;
        }
        // subgradient 0 at the |.| kink
        let sign = if vars.s_tilde[k] > 0.0 {
            1.0
        } else if vars.s_tilde[k] < 0.0 {
            -1.0
        } else {
            0.0
        };
        if phase == Phase::Joint {
            grad_s[k] = g_scale * sign;
        }

        // weight path through the row softmax
        let g_u = coeff.scales[k] * g_local;
        let g_wk: Vec<f64> = scene.basis.vectors.iter().map(|v| g_u.dot(v)).collect();
        let dot: f64 = coeff.weights[k]
            .iter()
            .zip(&g_wk)
            .map(|(&w, &g)| w * g)
            .sum();
        for j in 0..n_v {
            grad_w[k][j] = coeff.weights[k][j] * (g_wk[j] - dot);
        }
    }

    ObjectiveEval {
        residuals,
        objective: objective_val,
        grad_w,
        grad_s,
    }
}

/// Gradient of the phase objective for external verification (finite
/// difference checks). Returns (objective, grad over flattened
/// [w_tilde row-major, s_tilde]).
pub fn objective_with_grad(
    vars: &ReparamVars,
    scene: &SolveScene,
    cfg: &SolverConfig,
    joint_phase: bool,
) -> (f64, Vec<f64>) {
    let phase = if joint_phase { Phase::Joint } else { Phase::WeightsOnly };
    let eval = objective(vars, scene, cfg, phase);
    let mut flat: Vec<f64> = eval.grad_w.iter().flatten().copied().collect();
    flat.extend(&eval.grad_s);
    (eval.objective, flat)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub force: f64,
    pub torque: f64,
    pub contact2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub coefficients: ForceCoefficients,
    pub force_field: GlobalForceField,
    pub residuals: PhysicsResiduals,
    pub trace_phase1: Vec<TraceEntry>,
    pub trace_phase2: Vec<TraceEntry>,
    pub converged: bool,
    pub steps_phase1: usize,
    pub steps_phase2: usize,
}

fn run_phase(
    vars: &mut ReparamVars,
    scene: &SolveScene,
    cfg: &SolverConfig,
    phase: Phase,
    steps: usize,
) -> Result<(Vec<TraceEntry>, bool)> {
    if vars.unfrozen_count() == 0 {
        return Err(Error::AllAnchorsFrozen);
    }
    let n = vars.s_tilde.len();
    let n_v = cfg.n_v;
    let mut state = AdamState::new(n * n_v + n);
    let mut trace = Vec::new();
    let mut recent: Vec<f64> = Vec::new();
    const WINDOW: usize = 50;
    let mut converged = false;
    for step in 0..steps {
        let eval = objective(vars, scene, cfg, phase);
        if step % cfg.log_interval == 0 || step + 1 == steps {
            trace.push(TraceEntry {
                step,
                force: eval.residuals.force,
                torque: eval.residuals.torque,
                contact2: eval.residuals.contact2,
            });
        }
        let mut flat_params: Vec<f64> = vars.w_tilde.iter().flatten().copied().collect();
        flat_params.extend(&vars.s_tilde);
        let mut flat_grad: Vec<f64> = eval.grad_w.iter().flatten().copied().collect();
        flat_grad.extend(&eval.grad_s);
        adam_step(&mut state, &mut flat_params, &flat_grad, cfg)?;
        for k in 0..n {
            vars.w_tilde[k].copy_from_slice(&flat_params[k * n_v..(k + 1) * n_v]);
        }
        if phase == Phase::Joint {
            for k in 0..n {
                if !vars.frozen[k] {
                    vars.s_tilde[k] = flat_params[n * n_v + k];
                }
            }
        }
        recent.push(eval.objective);
        if recent.len() > 2 * WINDOW {
            recent.remove(0);
            let prev: f64 = recent[..WINDOW].iter().sum::<f64>() / WINDOW as f64;
            let cur: f64 = recent[WINDOW..].iter().sum::<f64>() / WINDOW as f64;
            if prev - cur < 1e-6 {
                converged = true;
            }
        }
    }
    Ok((trace, converged))
}

/// Phase 1: weights only, force balance objective.
pub fn solve_phase1(
    vars: &mut ReparamVars,
    scene: &SolveScene,
    cfg: &SolverConfig,
) -> Result<Vec<TraceEntry>> {
    run_phase(vars, scene, cfg, Phase::WeightsOnly, cfg.phase1_steps).map(|(t, _)| t)
}

/// Phase 2: joint weights-and-scales refinement, then the final report.
pub fn solve_phase2(
    vars: &mut ReparamVars,
    scene: &SolveScene,
    cfg: &SolverConfig,
    trace_phase1: Vec<TraceEntry>,
) -> Result<SolveReport> {
    let (trace_phase2, converged) =
        run_phase(vars, scene, cfg, Phase::Joint, cfg.phase2_steps)?;
    Ok(finish_report(
        vars,
        scene,
        cfg,
        trace_phase1,
        trace_phase2,
        converged,
    ))
}

fn finish_report(
    vars: &ReparamVars,
    scene: &SolveScene,
    cfg: &SolverConfig,
    trace_phase1: Vec<TraceEntry>,
    trace_phase2: Vec<TraceEntry>,
    converged: bool,
) -> SolveReport {
    let eval = objective(vars, scene, cfg, Phase::Joint);
    let coefficients = vars.coefficients();
    let local = crate::force::local_forces(&coefficients, &scene.basis)
        .expect("coefficients valid by construction");
    let force_field =
        crate::force::global_forces(&local, &scene.anchors).expect("matching anchor count");
    SolveReport {
        coefficients,
        force_field,
        residuals: eval.residuals,
        steps_phase1: cfg.phase1_steps,
        steps_phase2: cfg.phase2_steps,
        trace_phase1,
        trace_phase2,
        converged,
    }
}

/// Builds the solve scene from posed hand and object geometry: skins the
/// hand, evaluates anchors, queries signed distances against the object.
pub fn build_scene(
    model: &HandModel,
    pose: &HandPose,
    object: &SdfQuery,
    object_centroid: Vec3,
    gravity: Gravity,
    cfg: &SolverConfig,
) -> Result<SolveScene> {
    let mesh = model.skin_mesh(pose);
    let anchors = anchor_states(&mesh, AnchorTable::builtin())?;
    let distances: Vec<f64> = anchors
        .iter()
        .map(|a| object.signed_distance(&a.position).distance)
        .collect();
    let contact = ContactState {
        distances,
        center_of_mass: object_centroid,
    };
    let basis = cone_basis(cfg.mu, cfg.n_v)?;
    Ok(SolveScene::new(anchors, basis, gravity, contact, &cfg.omega))
}

/// Full pipeline: anchors, distances, init, phase 1, phase 2.
pub fn solve_pseudo_forces(
    model: &HandModel,
    pose: &HandPose,
    object_mesh: &TriMesh,
    gravity: Gravity,
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    let query = SdfQuery::new(object_mesh);
    let scene = build_scene(model, pose, &query, object_mesh.centroid(), gravity, cfg)?;
    let mut vars = init_coefficients(&scene.contact, cfg);
    let trace1 = solve_phase1(&mut vars, &scene, cfg)?;
    solve_phase2(&mut vars, &scene, cfg, trace1)
}

/// Phase-1-only evaluation used by the physics aggregation stage.
pub fn solve_phase1_only(scene: &SolveScene, cfg: &SolverConfig) -> Result<SolveReport> {
    let mut vars = init_coefficients(&scene.contact, cfg);
    let trace1 = solve_phase1(&mut vars, scene, cfg)?;
    Ok(finish_report(&vars, scene, cfg, trace1, Vec::new(), true))
}
