//! Batch front-end for the grasp-physics pipeline: scenario generation,
//! force solving, candidate sampling, heatmap rendering, aggregation,
//! and metric evaluation, with machine-readable JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use graspforge_core::aggregate::{
    aggregate_full, AggregationConfig, AggregationInput, AggregationReport, AGGREGATION_SCHEMA,
    HAND_CHANNELS, OBJECT_CHANNELS,
};
use graspforge_core::error::{Error, Result};
use graspforge_core::force::Gravity;
use graspforge_core::geom::{project_pinhole, Vec3};
use graspforge_core::hand::{forward_kinematics, HandModel, HandPose};
use graspforge_core::heatmap::{
    corrupt, image_to_heatmap, render_gaussian, to_svg, HeatmapConfig, HeatmapStack,
};
use graspforge_core::mesh::save_obj;
use graspforge_core::metrics::{
    contact_and_penetration, pose_errors, stability_proxy, EvalConfig, HandEval, PhysicsMetrics,
    PoseErrors, SymmetrySpec,
};
use graspforge_core::sample::{
    hand_candidate_from_pose, hand_pose_from_candidate, object_candidate_from_pose,
    object_pose_from_candidate, sample_candidates, CandidateSet, EntityTag, GaussianScore,
    NoiseSchedule, OdeTolerances, CANDIDATES_SCHEMA, HAND_CANDIDATE_DIM, OBJECT_CANDIDATE_DIM,
    T_F_HAND, T_F_OBJECT,
};
use graspforge_core::scenario::{build_canonical, Scenario, TemplateId, SCENARIO_SCHEMA};
use graspforge_core::solve::{solve_pseudo_forces, SolveReport, SolverConfig};

pub const SOLVE_REPORT_SCHEMA: &str = "solve-report.v1";
pub const METRICS_SCHEMA: &str = "metrics.v1";

// ---------------------------------------------------------------------------
// CLI surface

#[derive(Parser)]
#[command(name = "graspforge", version, about = "Grasp physics and pose aggregation pipeline")]
struct Cli {
    /// Worker threads (default: GRASPFORGE_THREADS, else all cores).
    /// Output is identical at any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic grasp scenario management.
    Scenario {
        #[command(subcommand)]
        cmd: ScenarioCmd,
    },
    /// Run the two-phase pseudo-force solver on a scenario.
    SolveForces(SolveForcesArgs),
    /// Sample pose candidates through the probability-flow ODE.
    GenCandidates(GenCandidatesArgs),
    /// Render (optionally corrupted) keypoint heatmaps for a scenario.
    Heatmaps(HeatmapsArgs),
    /// Visual + physics candidate aggregation.
    Aggregate(AggregateArgs),
    /// Evaluate an aggregated pose against the scenario ground truth.
    Eval(EvalArgs),
    /// All stages end to end into one directory.
    Pipeline(PipelineArgs),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Build a canonical scenario and write scenario.json plus OBJ meshes.
    Gen(ScenarioGenArgs),
}

#[derive(Args, Serialize)]
struct ScenarioGenArgs {
    /// Template name: pinch-sphere, tripod-sphere, wrap-cylinder,
    /// palm-box, hover-no-contact.
    #[arg(long)]
    template: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    phase1_steps: usize,
    #[arg(long, default_value_t = 2700)]
    phase2_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 12)]
    n_v: usize,
}

impl SolverArgs {
    fn to_config(&self) -> SolverConfig {
        SolverConfig {
            learning_rate: self.lr,
            phase1_steps: self.phase1_steps,
            phase2_steps: self.phase2_steps,
            mu: self.mu,
            n_v: self.n_v,
            ..Default::default()
        }
    }
}

#[derive(Args, Serialize)]
struct SolveForcesArgs {
    /// Scenario JSON input.
    #[arg(short = 'i', long)]
    #[serde(skip_serializing)]
    input: PathBuf,
    /// Solve report output.
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    /// Optional force-diagram SVG.
    #[arg(long)]
    #[serde(skip_serializing)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum, Serialize)]
enum Entity {
    Hand,
    Object,
}

#[derive(Args, Serialize)]
struct GenCandidatesArgs {
    #[arg(short = 'i', long)]
    #[serde(skip_serializing)]
    input: PathBuf,
    #[arg(long, value_enum)]
    entity: Entity,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// ODE start time; defaults to 0.55 (hand) or 0.65 (object).
    #[arg(long)]
    t_f: Option<f64>,
    /// Prior deviation around the reference pose in flat coordinates.
    #[arg(long)]
    sigma0: Option<f64>,
    /// Defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct CorruptArgs {
    /// Peak jitter deviation, heatmap pixels.
    #[arg(long, default_value_t = 0.0)]
    jitter_sigma: f64,
    /// Probability a channel is zeroed.
    #[arg(long, default_value_t = 0.0)]
    dropout_prob: f64,
    /// Additive noise deviation.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
}

impl CorruptArgs {
    fn active(&self) -> bool {
        self.jitter_sigma > 0.0 || self.dropout_prob > 0.0 || self.noise_sigma > 0.0
    }
}

#[derive(Args, Serialize)]
struct HeatmapsArgs {
    #[arg(short = 'i', long)]
    #[serde(skip_serializing)]
    input: PathBuf,
    /// Flat binary output (21 hand + 27 object channels).
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    #[command(flatten)]
    corrupt: CorruptArgs,
    /// Defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Optional SVG visualization.
    #[arg(long)]
    #[serde(skip_serializing)]
    svg: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AggregateArgs {
    #[arg(short = 'i', long)]
    #[serde(skip_serializing)]
    input: PathBuf,
    #[arg(long)]
    #[serde(skip_serializing)]
    hand_candidates: PathBuf,
    #[arg(long)]
    #[serde(skip_serializing)]
    object_candidates: PathBuf,
    /// Combined heatmap binary from the `heatmaps` subcommand.
    #[arg(long)]
    #[serde(skip_serializing)]
    heatmaps: PathBuf,
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    /// Visual-only ablation: skip the physics stage.
    #[arg(long)]
    no_physics: bool,
    /// Full two-phase solve per candidate instead of phase 1 only.
    #[arg(long)]
    full_solve: bool,
    #[arg(long, default_value_t = 30)]
    k_vis_hand: usize,
    #[arg(long, default_value_t = 10)]
    k_vis_obj_t: usize,
    #[arg(long, default_value_t = 10)]
    k_vis_obj_r: usize,
    #[arg(long, default_value_t = 5)]
    k_phy_hand: usize,
    #[arg(long, default_value_t = 5)]
    k_phy_obj: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    /// Aggregation report with the predicted poses.
    #[arg(long)]
    #[serde(skip_serializing)]
    pred: PathBuf,
    #[arg(long)]
    #[serde(skip_serializing)]
    scenario: PathBuf,
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    /// Optional single-row CSV of all metrics.
    #[arg(long)]
    #[serde(skip_serializing)]
    csv: Option<PathBuf>,
    /// Contact threshold tau, meters.
    #[arg(long, default_value_t = 0.002)]
    contact_tau: f64,
    /// Rigid-only Procrustes alignment for PA-MJE (default includes scale).
    #[arg(long)]
    pa_no_scale: bool,
}

#[derive(Args, Serialize)]
struct PipelineArgs {
    #[arg(short = 'i', long)]
    #[serde(skip_serializing)]
    input: PathBuf,
    /// Master seed; every stage derives a named substream from it.
    /// Defaults to the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    #[serde(skip_serializing)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long)]
    no_physics: bool,
    #[command(flatten)]
    corrupt: CorruptArgs,
}

// ---------------------------------------------------------------------------
// Artifact plumbing

/// Envelope every JSON artifact is wrapped in: schema version, the seed
/// the stage ran with, and a hash of the effective configuration.
#[derive(Serialize, Deserialize)]
struct Artifact<T> {
    schema: String,
    seed: u64,
    config_hash: String,
    payload: T,
}

fn config_hash<C: Serialize>(cfg: &C) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..16])
}

fn write_artifact<T: Serialize>(
    path: &Path,
    schema: &str,
    seed: u64,
    hash: &str,
    payload: &T,
) -> Result<()> {
    let artifact = Artifact {
        schema: schema.to_string(),
        seed,
        config_hash: hash.to_string(),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON artifact, accepting both enveloped and bare payloads.
fn read_artifact<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let payload = match value.get("payload") {
        Some(p) => p.clone(),
        None => value,
    };
    Ok(serde_json::from_value(payload)?)
}

/// Derives a named 64-bit substream seed from the master seed so each
/// pipeline stage draws from independent randomness.
fn substream(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let scenario: Scenario = read_artifact(path)?;
    scenario.validate()?;
    Ok(scenario)
}

// ---------------------------------------------------------------------------
// Subcommand bodies

fn run_scenario_gen(args: &ScenarioGenArgs) -> Result<()> {
    let template: TemplateId = args.template.parse()?;
    let scenario = build_canonical(template, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let hash = config_hash(args);
    write_artifact(
        &args.out.join("scenario.json"),
        SCENARIO_SCHEMA,
        args.seed,
        &hash,
        &scenario,
    )?;
    save_obj(&scenario.object_mesh, &args.out.join("object.obj"))?;
    let model = HandModel::new(scenario.hand_shape.clone());
    save_obj(&model.skin_mesh(&scenario.hand_pose), &args.out.join("hand.obj"))?;
    Ok(())
}

fn posed_object(scenario: &Scenario) -> graspforge_core::mesh::TriMesh {
    scenario
        .object_mesh
        .transformed(&scenario.object_rotation, &scenario.object_translation)
}

fn solve_scenario(scenario: &Scenario, cfg: &SolverConfig) -> Result<SolveReport> {
    let model = HandModel::new(scenario.hand_shape.clone());
    let posed = posed_object(scenario);
    solve_pseudo_forces(
        &model,
        &scenario.hand_pose,
        &posed,
        Gravity::new(scenario.gravity)?,
        cfg,
    )
}

fn run_solve_forces(args: &SolveForcesArgs) -> Result<()> {
    let scenario = load_scenario(&args.input)?;
    let report = solve_scenario(&scenario, &args.solver.to_config())?;
    write_artifact(
        &args.out,
        SOLVE_REPORT_SCHEMA,
        scenario.seed,
        &config_hash(args),
        &report,
    )?;
    if let Some(svg_path) = &args.svg {
        let svg = force_svg(&scenario, &report)?;
        fs::write(svg_path, svg)?;
    }
    Ok(())
}

/// Force diagram in image coordinates: anchors as dots, contact forces
/// as blue arrows, gravity on the object center as a yellow arrow.
fn force_svg(scenario: &Scenario, report: &SolveReport) -> Result<String> {
    let cam = &scenario.camera;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\">\n",
        cam.width, cam.height
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#202020\"/>\n");
    // Arrow length: 10 cm in world space per unit force.
    const FORCE_SCALE: f64 = 0.1;
    let arrow = |from: Vec3, to: Vec3, color: &str, out: &mut String| -> Result<()> {
        let (x1, y1) = project_pinhole(from, cam)?;
        let (x2, y2) = project_pinhole(to, cam)?;
        out.push_str(&format!(
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" \
             stroke=\"{color}\" stroke-width=\"1.2\"/>\n\
             <circle cx=\"{x1:.2}\" cy=\"{y1:.2}\" r=\"1.5\" fill=\"{color}\"/>\n"
        ));
        Ok(())
    };
    for (p, f) in report
        .force_field
        .positions
        .iter()
        .zip(&report.force_field.forces)
    {
        if f.norm() > 1e-9 {
            arrow(*p, p + f * FORCE_SCALE, "blue", &mut out)?;
        } else {
            let (x, y) = project_pinhole(*p, cam)?;
            out.push_str(&format!(
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.0\" fill=\"#808080\"/>\n"
            ));
        }
    }
    let center = posed_object(scenario).centroid();
    let g = Gravity::new(scenario.gravity)?;
    arrow(center, center + g.vector() * FORCE_SCALE, "yellow", &mut out)?;
    out.push_str("</svg>\n");
    Ok(out)
}

fn run_gen_candidates(args: &GenCandidatesArgs) -> Result<()> {
    let scenario = load_scenario(&args.input)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    let schedule = NoiseSchedule::default();
    let tol = OdeTolerances::default();
    let set = match args.entity {
        Entity::Hand => {
            let mean = hand_candidate_from_pose(&scenario.hand_pose);
            let score = GaussianScore {
                mean,
                sigma0: args.sigma0.unwrap_or(0.05),
            };
            sample_candidates(
                args.n,
                HAND_CANDIDATE_DIM,
                EntityTag::Hand,
                args.t_f.unwrap_or(T_F_HAND),
                &score,
                &schedule,
                &tol,
                substream(seed, "candidates-hand"),
            )?
        }
        Entity::Object => {
            let mean = object_candidate_from_pose(
                &scenario.object_rotation,
                &scenario.object_translation,
            );
            let score = GaussianScore {
                mean,
                sigma0: args.sigma0.unwrap_or(0.02),
            };
            sample_candidates(
                args.n,
                OBJECT_CANDIDATE_DIM,
                EntityTag::Object,
                args.t_f.unwrap_or(T_F_OBJECT),
                &score,
                &schedule,
                &tol,
                substream(seed, "candidates-object"),
            )?
        }
    };
    set.validate()?;
    write_artifact(&args.out, CANDIDATES_SCHEMA, seed, &config_hash(args), &set)
}

/// Renders the 48-channel ground-truth heatmap stack: 21 hand keypoint
/// channels followed by 27 object box-keypoint channels. Keypoints
/// behind the camera render as empty channels.
fn render_scenario_heatmaps(
    scenario: &Scenario,
    corrupt_args: &CorruptArgs,
    seed: u64,
) -> Result<HeatmapStack> {
    let model = HandModel::new(scenario.hand_shape.clone());
    let hand_kp = forward_kinematics(&scenario.hand_pose, &model.shape);
    let keypoints27 = graspforge_core::mesh::bbox_keypoints_27(&scenario.object_mesh);
    let mut peaks: Vec<(f64, f64)> = Vec::with_capacity(HAND_CHANNELS + OBJECT_CHANNELS);
    let push = |p: Vec3, peaks: &mut Vec<(f64, f64)>| {
        match project_pinhole(p, &scenario.camera) {
            Ok((u, v)) => peaks.push(image_to_heatmap(u, v)),
            Err(_) => peaks.push((-1e9, -1e9)),
        }
    };
    for p in &hand_kp {
        push(*p, &mut peaks);
    }
    for p in &keypoints27.0 {
        push(
            scenario.object_rotation * p + scenario.object_translation,
            &mut peaks,
        );
    }
    let cfg = HeatmapConfig {
        jitter_sigma: corrupt_args.jitter_sigma,
        dropout_prob: corrupt_args.dropout_prob,
        noise_sigma: corrupt_args.noise_sigma,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let clean = render_gaussian(&peaks, &cfg)?;
    if corrupt_args.active() {
        corrupt(&clean, &cfg)
    } else {
        Ok(clean)
    }
}

fn run_heatmaps(args: &HeatmapsArgs) -> Result<()> {
    let scenario = load_scenario(&args.input)?;
    let seed = args.seed.unwrap_or(substream(scenario.seed, "heatmaps"));
    let stack = render_scenario_heatmaps(&scenario, &args.corrupt, seed)?;
    let mut file = fs::File::create(&args.out)?;
    graspforge_core::heatmap::write_flat(&stack, &mut file)?;
    if let Some(svg_path) = &args.svg {
        fs::write(svg_path, to_svg(&stack)?)?;
    }
    Ok(())
}

fn split_heatmaps(stack: &HeatmapStack) -> Result<(HeatmapStack, HeatmapStack)> {
    if stack.channels() != HAND_CHANNELS + OBJECT_CHANNELS {
        return Err(Error::BadChannel {
            channel: HAND_CHANNELS + OBJECT_CHANNELS - 1,
            channels: stack.channels(),
        });
    }
    let hand: Vec<Vec<f64>> = (0..HAND_CHANNELS)
        .map(|c| Ok(stack.channel(c)?.to_vec()))
        .collect::<Result<_>>()?;
    let object: Vec<Vec<f64>> = (HAND_CHANNELS..HAND_CHANNELS + OBJECT_CHANNELS)
        .map(|c| Ok(stack.channel(c)?.to_vec()))
        .collect::<Result<_>>()?;
    Ok((
        HeatmapStack::from_channels(hand)?,
        HeatmapStack::from_channels(object)?,
    ))
}

fn decode_hand_candidates(set: &CandidateSet, reference: &HandPose) -> Result<Vec<HandPose>> {
    if set.entity != EntityTag::Hand {
        return Err(Error::SchemaError("expected hand candidates".into()));
    }
    set.candidates
        .iter()
        .map(|c| hand_pose_from_candidate(c, reference))
        .collect()
}

fn decode_object_candidates(
    set: &CandidateSet,
) -> Result<Vec<(graspforge_core::geom::Mat3, Vec3)>> {
    if set.entity != EntityTag::Object {
        return Err(Error::SchemaError("expected object candidates".into()));
    }
    set.candidates
        .iter()
        .map(|c| object_pose_from_candidate(c))
        .collect()
}

fn run_aggregate_inner(
    scenario: &Scenario,
    hand_set: &CandidateSet,
    object_set: &CandidateSet,
    stack: &HeatmapStack,
    cfg: &AggregationConfig,
) -> Result<AggregationReport> {
    hand_set.validate()?;
    object_set.validate()?;
    let hands = decode_hand_candidates(hand_set, &scenario.hand_pose)?;
    let objects = decode_object_candidates(object_set)?;
    let (hand_hm, object_hm) = split_heatmaps(stack)?;
    let model = HandModel::new(scenario.hand_shape.clone());
    let input = AggregationInput {
        model: &model,
        object_mesh: &scenario.object_mesh,
        gravity: Gravity::new(scenario.gravity)?,
        camera: &scenario.camera,
        hand_heatmaps: &hand_hm,
        object_heatmaps: &object_hm,
    };
    aggregate_full(&input, &hands, &objects, cfg)
}

fn run_aggregate(args: &AggregateArgs) -> Result<()> {
    let scenario = load_scenario(&args.input)?;
    let hand_set: CandidateSet = read_artifact(&args.hand_candidates)?;
    let object_set: CandidateSet = read_artifact(&args.object_candidates)?;
    let mut file = fs::File::open(&args.heatmaps).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", args.heatmaps.display()),
        ))
    })?;
    let stack = graspforge_core::heatmap::read_flat(&mut file)?;
    let cfg = AggregationConfig {
        n: hand_set.candidates.len().max(object_set.candidates.len()),
        k_vis_hand: args.k_vis_hand,
        k_vis_obj_t: args.k_vis_obj_t,
        k_vis_obj_r: args.k_vis_obj_r,
        k_phy_hand: args.k_phy_hand,
        k_phy_obj: args.k_phy_obj,
        full_solve: args.full_solve,
        enable_physics: !args.no_physics,
        solver: args.solver.to_config(),
    };
    let report = run_aggregate_inner(&scenario, &hand_set, &object_set, &stack, &cfg)?;
    write_artifact(
        &args.out,
        AGGREGATION_SCHEMA,
        scenario.seed,
        &config_hash(args),
        &report,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricsReport {
    schema: String,
    pose: PoseErrors,
    physics: PhysicsMetrics,
    /// Equilibrium-residual stability proxy of the predicted grasp.
    stability: f64,
}

fn evaluate(
    scenario: &Scenario,
    pred: &AggregationReport,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let model = HandModel::new(scenario.hand_shape.clone());
    let gt_kp = forward_kinematics(&scenario.hand_pose, &model.shape);
    let gt_mesh = model.skin_mesh(&scenario.hand_pose);
    let pred_kp = forward_kinematics(&pred.final_hand, &model.shape);
    let pred_mesh = model.skin_mesh(&pred.final_hand);
    let pose = pose_errors(
        &HandEval {
            keypoints: &pred_kp,
            mesh_vertices: pred_mesh.vertices(),
        },
        &HandEval {
            keypoints: &gt_kp,
            mesh_vertices: gt_mesh.vertices(),
        },
        (&pred.final_object_rotation, &pred.final_object_translation),
        (&scenario.object_rotation, &scenario.object_translation),
        &scenario.object_mesh,
        &SymmetrySpec::none(),
        &scenario.camera,
        cfg,
    )?;
    let pred_object = scenario
        .object_mesh
        .transformed(&pred.final_object_rotation, &pred.final_object_translation);
    let physics = contact_and_penetration(&pred_mesh, &pred_object, cfg.contact_tau)?;
    let stability = stability_proxy(
        &model,
        &pred.final_hand,
        &pred_object,
        Gravity::new(scenario.gravity)?,
        &SolverConfig::default(),
    )?;
    Ok(MetricsReport {
        schema: METRICS_SCHEMA.into(),
        pose,
        physics,
        stability,
    })
}

fn metrics_csv(report: &MetricsReport) -> String {
    let p = &report.pose;
    format!(
        "mje_mm,pa_mje_mm,mme_mm,oce_mm,mce_mm,smce_mm,add_mm,add_s_mm,\
         add_01d_pct,adds_01d_pct,rep_px,contact,pd_mm,stability\n\
         {},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        p.mje_mm,
        p.pa_mje_mm,
        p.mme_mm,
        p.oce_mm,
        p.mce_mm,
        p.smce_mm,
        p.add_mm,
        p.add_s_mm,
        p.add_01d_pct,
        p.adds_01d_pct,
        p.rep_px,
        report.physics.contact,
        report.physics.pd_mm,
        report.stability
    )
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let pred: AggregationReport = read_artifact(&args.pred)?;
    pred.validate()?;
    let cfg = EvalConfig {
        pa_with_scale: !args.pa_no_scale,
        contact_tau: args.contact_tau,
        ..Default::default()
    };
    let report = evaluate(&scenario, &pred, &cfg)?;
    write_artifact(
        &args.out,
        METRICS_SCHEMA,
        scenario.seed,
        &config_hash(args),
        &report,
    )?;
    if let Some(csv_path) = &args.csv {
        fs::write(csv_path, metrics_csv(&report))?;
    }
    Ok(())
}

fn run_pipeline(args: &PipelineArgs) -> Result<()> {
    let scenario = load_scenario(&args.input)?;
    let seed = args.seed.unwrap_or(scenario.seed);
    fs::create_dir_all(&args.out)?;
    let hash = config_hash(args);

    // Heatmaps.
    let stack = render_scenario_heatmaps(&scenario, &args.corrupt, substream(seed, "heatmaps"))?;
    let mut file = fs::File::create(args.out.join("heatmaps.bin"))?;
    graspforge_core::heatmap::write_flat(&stack, &mut file)?;

    // Candidates.
    let schedule = NoiseSchedule::default();
    let tol = OdeTolerances::default();
    let hand_set = sample_candidates(
        args.n,
        HAND_CANDIDATE_DIM,
        EntityTag::Hand,
        T_F_HAND,
        &GaussianScore {
            mean: hand_candidate_from_pose(&scenario.hand_pose),
            sigma0: 0.05,
        },
        &schedule,
        &tol,
        substream(seed, "candidates-hand"),
    )?;
    let object_set = sample_candidates(
        args.n,
        OBJECT_CANDIDATE_DIM,
        EntityTag::Object,
        T_F_OBJECT,
        &GaussianScore {
            mean: object_candidate_from_pose(
                &scenario.object_rotation,
                &scenario.object_translation,
            ),
            sigma0: 0.02,
        },
        &schedule,
        &tol,
        substream(seed, "candidates-object"),
    )?;
    write_artifact(
        &args.out.join("hand-candidates.json"),
        CANDIDATES_SCHEMA,
        seed,
        &hash,
        &hand_set,
    )?;
    write_artifact(
        &args.out.join("object-candidates.json"),
        CANDIDATES_SCHEMA,
        seed,
        &hash,
        &object_set,
    )?;

    // Aggregation.
    let agg_cfg = AggregationConfig {
        n: args.n,
        enable_physics: !args.no_physics,
        ..Default::default()
    };
    let report = run_aggregate_inner(&scenario, &hand_set, &object_set, &stack, &agg_cfg)?;
    write_artifact(
        &args.out.join("aggregation.json"),
        AGGREGATION_SCHEMA,
        seed,
        &hash,
        &report,
    )?;

    // Ground-truth force solve with diagram.
    let solve = solve_scenario(&scenario, &SolverConfig::default());
    match solve {
        Ok(solve_report) => {
            write_artifact(
                &args.out.join("solve-report.json"),
                SOLVE_REPORT_SCHEMA,
                seed,
                &hash,
                &solve_report,
            )?;
            fs::write(
                args.out.join("forces.svg"),
                force_svg(&scenario, &solve_report)?,
            )?;
        }
        // A no-contact scenario has no force labels; skip the report.
        Err(Error::AllAnchorsFrozen) => {}
        Err(e) => return Err(e),
    }

    // Evaluation.
    let metrics = evaluate(&scenario, &report, &EvalConfig::default())?;
    write_artifact(
        &args.out.join("metrics.json"),
        METRICS_SCHEMA,
        seed,
        &hash,
        &metrics,
    )?;
    fs::write(args.out.join("metrics.csv"), metrics_csv(&metrics))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::ParseError { .. } => 5,
        Error::Json(_)
        | Error::SchemaError(_)
        | Error::VersionError { .. }
        | Error::DimensionMismatch { .. }
        | Error::BadChannel { .. } => 3,
        Error::InvalidParameter(_) | Error::OutOfRange(_) | Error::UnknownTemplate(_) => 2,
        _ => 4,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Scenario {
            cmd: ScenarioCmd::Gen(args),
        } => run_scenario_gen(args),
        Cmd::SolveForces(args) => run_solve_forces(args),
        Cmd::GenCandidates(args) => run_gen_candidates(args),
        Cmd::Heatmaps(args) => run_heatmaps(args),
        Cmd::Aggregate(args) => run_aggregate(args),
        Cmd::Eval(args) => run_eval(args),
        Cmd::Pipeline(args) => run_pipeline(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("GRASPFORGE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure {t} worker threads");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
