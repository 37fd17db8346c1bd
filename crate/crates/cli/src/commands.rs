use std::path::Path;

use serde::{Deserialize, Serialize};

use hemoflow::geom::Vec3;
use hemoflow::graph::{assemble, AugmentedAdjacency};
use hemoflow::hemo::{assess_risk, extract_metrics, RiskMetrics, RiskReport, WallField, WallShear};
use hemoflow::meshio::{
    generate_synthetic_case, read_mesh, read_trajectory, read_waveform, write_mesh, write_trajectory, write_waveform,
    Mesh, Trajectory, DEFAULT_DT,
};
use hemoflow::model::{param_count, FlowCase};
use hemoflow::rollout::{
    bulge_l2_error, delta_metric, mean_speed, mean_squared_error, one_step_error, rollout,
    ErrorPair, ModelStepper, PersistenceStepper,
};
use hemoflow::train::{
    desk_setup, fit_scaling_law, full_schedule, isoflops_sweep, previous_frame, scaled_schedule, Checkpoint,
    PhaseSpec, Progress, ScalingFit, Seeds, SweepReport, Trainer,
};

use crate::config::{self, resolve, ScalingMode, ScheduleConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{OutDir, RunManifest};

/// Everything a command needs besides its parsed config.
pub struct Invocation<'a> {
    pub config_bytes: &'a [u8],
    pub config_dir: &'a Path,
    pub seed: Option<u64>,
    pub out: &'a OutDir,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeSet {
    pub nodes: Vec<usize>,
}

fn load_mesh(m: &mut RunManifest, inv: &Invocation, p: &Path) -> CliResult<Mesh> {
    Ok(read_mesh(&m.read_input("mesh", &resolve(inv.config_dir, p))?)?)
}

fn load_trajectory(m: &mut RunManifest, inv: &Invocation, role: &str, p: &Path, mesh: &Mesh) -> CliResult<Trajectory> {
    let traj = read_trajectory(&m.read_input(role, &resolve(inv.config_dir, p))?, Some(mesh.num_nodes()))?;
    if traj.mesh_hash != mesh.content_hash() {
        return Err(hemoflow::Error::Shape(format!("{role} trajectory was produced on a different mesh")).into());
    }
    Ok(traj)
}

fn load_nodes(m: &mut RunManifest, inv: &Invocation, p: &Path, mesh: &Mesh) -> CliResult<Vec<usize>> {
    let path = resolve(inv.config_dir, p);
    let set: NodeSet = serde_json::from_slice(&m.read_input("bulge", &path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if let Some(&bad) = set.nodes.iter().find(|&&i| i >= mesh.num_nodes()) {
        return Err(CliError::Input(format!("{}: node {bad} is outside the mesh", path.display())));
    }
    Ok(set.nodes)
}

fn frames_of(traj: &Trajectory) -> Vec<Vec<Vec3>> {
    (0..traj.num_steps()).map(|k| traj.frame_f64(k)).collect()
}

fn load_checkpoint(m: &mut RunManifest, inv: &Invocation, p: &Path) -> CliResult<Trainer<f32>> {
    let bytes = m.read_input("checkpoint", &resolve(inv.config_dir, p))?;
    Ok(Checkpoint::from_bytes(&bytes)?.into_trainer()?)
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> hemoflow::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn synth(inv: &Invocation) -> CliResult<()> {
    let mut cfg: config::SynthConfig = config::parse(inv.config_bytes)?;
    if let Some(seed) = inv.seed {
        cfg.flow.seed = seed;
    }
    let m = RunManifest::new("synth", inv.config_bytes, cfg.flow.seed);
    let case = generate_synthetic_case(&cfg.geometry, &cfg.flow)?;
    inv.out.write_artifact("mesh.hsm", &to_bytes(|b| write_mesh(&case.mesh, b))?, &m)?;
    inv.out.write_artifact("waveform.txt", &to_bytes(|b| write_waveform(&case.waveform, b))?, &m)?;
    inv.out.write_artifact("trajectory.hst", &to_bytes(|b| write_trajectory(&case.trajectory, b))?, &m)?;
    inv.out.write_report("bulge.json", &NodeSet { nodes: case.bulge_nodes }, &m)
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub steps: usize,
    pub one_step: ErrorPair,
    pub all_rollout: ErrorPair,
    pub bulge_l2: f64,
    pub persistence_bulge_l2: f64,
    pub mean_bulge_speed: f64,
    pub boundary_violations: Vec<usize>,
}

/// Rolls a trained model over the held-out case alongside persistence.
pub fn evaluate_on(
    trainer: &Trainer<f32>,
    case: &FlowCase,
    aug: &AugmentedAdjacency,
    frames: &[Vec<Vec3>],
    bulge: &[usize],
) -> CliResult<EvalReport> {
    let steps = frames.len() - 1;
    let prev = previous_frame(frames, 0);
    let mut stepper = ModelStepper { model: &trainer.model, stats: &trainer.stats, aug };
    let r = rollout(&mut stepper, case, &frames[0], prev, steps)?;
    let p = rollout(&mut PersistenceStepper, case, &frames[0], prev, steps)?;
    Ok(EvalReport {
        steps,
        one_step: one_step_error(&mut stepper, case, frames, prev)?,
        all_rollout: mean_squared_error(&r.frames, frames)?,
        bulge_l2: bulge_l2_error(&r.frames, frames, bulge)?,
        persistence_bulge_l2: bulge_l2_error(&p.frames, frames, bulge)?,
        mean_bulge_speed: mean_speed(frames, bulge),
        boundary_violations: r.boundary_violations,
    })
}

#[derive(Debug, Serialize)]
struct TrainReport {
    params: u64,
    phases: Vec<(String, u64)>,
    optimizer_steps: u64,
    progress: Progress,
    final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation: Option<EvalReport>,
}

pub fn schedule_phases(s: &ScheduleConfig) -> CliResult<Vec<PhaseSpec>> {
    let phases = match s {
        ScheduleConfig::Scaled { scale, lr_scale, noise_sigma } => {
            if !(*scale >= 1.0 && *lr_scale > 0.0) {
                return Err(CliError::Config("schedule needs scale >= 1 and lr_scale > 0".into()));
            }
            scaled_schedule(*noise_sigma, *scale, *lr_scale)
        }
        ScheduleConfig::Full { noise_sigma } => full_schedule(*noise_sigma),
        ScheduleConfig::Phases { phases } => phases.clone(),
    };
    if phases.is_empty() {
        return Err(CliError::Config("schedule has no phases".into()));
    }
    phases.iter().try_for_each(PhaseSpec::validate)?;
    Ok(phases)
}

pub fn train(inv: &Invocation) -> CliResult<()> {
    let cfg: config::TrainConfig = config::parse(inv.config_bytes)?;
    cfg.model.validate()?;
    let phases = schedule_phases(&cfg.schedule)?;
    let mut m = RunManifest::new("train", inv.config_bytes, inv.seed.unwrap_or(0));
    let resumed = match &cfg.resume {
        Some(p) => {
            let t = load_checkpoint(&mut m, inv, p)?;
            if t.model.config != cfg.model {
                return Err(CliError::Config("resumed checkpoint has a different model configuration".into()));
            }
            if inv.seed.is_some_and(|s| Seeds::from_base(s) != t.seeds) {
                return Err(CliError::Config("--seed disagrees with the resumed checkpoint".into()));
            }
            Some(t)
        }
        None => None,
    };
    let seeds = resumed.as_ref().map_or(Seeds::from_base(m.seed), |t| t.seeds);
    m.seed = seeds.init;
    let setup = desk_setup(&cfg.model, &cfg.corpus, seeds.augment)?;
    let mut trainer = match resumed {
        Some(t) => t,
        None => {
            let stats = setup.corpus.fit_norm_stats(phases[0].noise_sigma)?;
            Trainer::new(cfg.model.clone(), stats, seeds)?
        }
    };
    trainer.run_schedule(&phases, &setup.corpus, cfg.max_steps)?;
    let mask_ratios = phases.iter().map(|p| p.mask_ratio).collect();
    let ckpt = Checkpoint::from_trainer(&trainer, mask_ratios).to_bytes()?;
    inv.out.write_artifact("checkpoint.hsc", &ckpt, &m)?;
    inv.out.write_artifact("loss.csv", trainer.loss_csv().as_bytes(), &m)?;
    let evaluation = if cfg.evaluate {
        let e = &setup.eval;
        Some(evaluate_on(&trainer, &e.case, &e.aug, &e.frames, &e.bulge_nodes)?)
    } else {
        None
    };
    let report = TrainReport {
        params: param_count(&cfg.model),
        phases: phases.iter().map(|p| (p.name.clone(), p.steps)).collect(),
        optimizer_steps: trainer.optimizer.step,
        progress: trainer.progress,
        final_loss: trainer.log.last().map(|r| r.loss),
        evaluation,
    };
    inv.out.write_report("report.json", &report, &m)
}

#[derive(Debug, Serialize)]
struct RolloutReport {
    steps: usize,
    dt: f64,
    boundary_violations: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    one_step: Option<ErrorPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    all_rollout: Option<ErrorPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    persistence: Option<ErrorPair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bulge_l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    persistence_bulge_l2: Option<f64>,
}

pub fn rollout_cmd(inv: &Invocation) -> CliResult<()> {
    let cfg: config::RolloutConfig = config::parse(inv.config_bytes)?;
    let mut m = RunManifest::new("rollout", inv.config_bytes, inv.seed.unwrap_or(0));
    let trainer = load_checkpoint(&mut m, inv, &cfg.checkpoint)?;
    m.seed = trainer.seeds.init;
    let mesh = load_mesh(&mut m, inv, &cfg.mesh)?;
    let wave_path = resolve(inv.config_dir, &cfg.waveform);
    let wave_text = String::from_utf8(m.read_input("waveform", &wave_path)?)
        .map_err(|_| CliError::Input(format!("{}: not UTF-8 text", wave_path.display())))?;
    let waveform = read_waveform(&wave_text)?;
    let truth = match &cfg.trajectory {
        Some(p) => Some(load_trajectory(&mut m, inv, "trajectory", p, &mesh)?),
        None => None,
    };
    let bulge = match &cfg.bulge {
        Some(p) => Some(load_nodes(&mut m, inv, p, &mesh)?),
        None => None,
    };
    let dt = cfg.dt.or(truth.as_ref().map(|t| t.dt)).unwrap_or(DEFAULT_DT);
    let mesh_hash = mesh.content_hash();
    let case = FlowCase::new(mesh, waveform, dt)?;
    let config = &trainer.model.config;
    let aug = assemble(&case.graph, &case.mesh, &config.augment_config(trainer.seeds.augment), config.layers, config.heads)?;
    let frames = truth.as_ref().map(frames_of);
    let steps = cfg
        .steps
        .or(frames.as_ref().map(|f| f.len().saturating_sub(1)))
        .unwrap_or_else(|| case.steps_per_cycle());
    let (initial, previous) = match &frames {
        Some(f) => (f[0].clone(), previous_frame(f, 0).to_vec()),
        None => {
            let mut rest = vec![[0.0; 3]; case.num_nodes()];
            case.enforce_boundaries(&mut rest, 0.0);
            (rest.clone(), rest)
        }
    };
    let mut stepper = ModelStepper { model: &trainer.model, stats: &trainer.stats, aug: &aug };
    let r = rollout(&mut stepper, &case, &initial, &previous, steps)?;
    let mut report = RolloutReport {
        steps,
        dt,
        boundary_violations: r.boundary_violations.clone(),
        one_step: None,
        all_rollout: None,
        persistence: None,
        bulge_l2: None,
        persistence_bulge_l2: None,
    };
    if let Some(f) = &frames {
        let horizon = steps.min(f.len() - 1);
        if horizon > 0 {
            let truth = &f[..=horizon];
            let p = rollout(&mut PersistenceStepper, &case, &initial, &previous, horizon)?;
            report.one_step = Some(one_step_error(&mut stepper, &case, truth, &previous)?);
            report.all_rollout = Some(mean_squared_error(&r.frames[..=horizon], truth)?);
            report.persistence = Some(mean_squared_error(&p.frames, truth)?);
            if let Some(b) = &bulge {
                report.bulge_l2 = Some(bulge_l2_error(&r.frames[..=horizon], truth, b)?);
                report.persistence_bulge_l2 = Some(bulge_l2_error(&p.frames, truth, b)?);
            }
        }
    }
    let traj = r.to_trajectory(mesh_hash, dt);
    inv.out.write_artifact("prediction.hst", &to_bytes(|b| write_trajectory(&traj, b))?, &m)?;
    inv.out.write_report("report.json", &report, &m)
}

#[derive(Debug, Serialize)]
struct MetricsReport {
    steps: usize,
    error: ErrorPair,
    /// Root-mean-square error of each frame after the first.
    frame_rmse: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bulge_l2: Option<f64>,
}

pub fn metrics(inv: &Invocation) -> CliResult<()> {
    let cfg: config::MetricsConfig = config::parse(inv.config_bytes)?;
    let mut m = RunManifest::new("metrics", inv.config_bytes, inv.seed.unwrap_or(0));
    let mesh = load_mesh(&mut m, inv, &cfg.mesh)?;
    let pred = frames_of(&load_trajectory(&mut m, inv, "prediction", &cfg.prediction, &mesh)?);
    let truth = frames_of(&load_trajectory(&mut m, inv, "truth", &cfg.truth, &mesh)?);
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(hemoflow::Error::Shape(format!(
            "prediction has {} frames, truth {}; need equal counts of at least two",
            pred.len(),
            truth.len()
        ))
        .into());
    }
    let frame_rmse = (1..pred.len())
        .map(|k| mean_squared_error(&pred[k - 1..=k], &truth[k - 1..=k]).map(|e| e.rmse))
        .collect::<hemoflow::Result<Vec<_>>>()?;
    let bulge_l2 = match &cfg.bulge {
        Some(p) => Some(bulge_l2_error(&pred, &truth, &load_nodes(&mut m, inv, p, &mesh)?)?),
        None => None,
    };
    let report = MetricsReport { steps: pred.len() - 1, error: mean_squared_error(&pred, &truth)?, frame_rmse, bulge_l2 };
    inv.out.write_report("report.json", &report, &m)
}

#[derive(Debug, Serialize)]
struct MetricDeltas {
    tawss_mean: Option<f64>,
    peak_wss: Option<f64>,
    osi_max: Option<f64>,
    systolic_velocity: Option<f64>,
}

#[derive(Debug, Serialize)]
struct HemoReport {
    wall_nodes: usize,
    steps: usize,
    tawss_mean_wall: f64,
    osi_max_wall: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<RiskMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_metrics: Option<RiskMetrics>,
    /// Relative differences against the reference, per metric.
    #[serde(skip_serializing_if = "Option::is_none")]
    delta: Option<MetricDeltas>,
}

pub fn hemo(inv: &Invocation) -> CliResult<()> {
    let cfg: config::HemoConfig = config::parse(inv.config_bytes)?;
    cfg.casson.validate()?;
    let mut m = RunManifest::new("hemo", inv.config_bytes, inv.seed.unwrap_or(0));
    let mesh = load_mesh(&mut m, inv, &cfg.mesh)?;
    let traj = load_trajectory(&mut m, inv, "trajectory", &cfg.trajectory, &mesh)?;
    let op = WallShear::new(&mesh, cfg.casson)?;
    let frames = frames_of(&traj);
    let wall = WallField::with_operator(&op, &mesh, &frames, traj.dt)?;
    inv.out.write_artifact("wall.hsw", &wall.to_bytes(), &m)?;
    let bulge = match &cfg.bulge {
        Some(p) => Some(load_nodes(&mut m, inv, p, &mesh)?),
        None => None,
    };
    let metrics = match &bulge {
        Some(b) => Some(extract_metrics(&mesh, &frames, &wall, b, cfg.options)?),
        None => None,
    };
    let reference_metrics = match (&cfg.reference, &bulge) {
        (Some(p), Some(b)) => {
            let rt = load_trajectory(&mut m, inv, "reference", p, &mesh)?;
            let rf = frames_of(&rt);
            let rw = WallField::with_operator(&op, &mesh, &rf, rt.dt)?;
            Some(extract_metrics(&mesh, &rf, &rw, b, cfg.options)?)
        }
        (Some(_), None) => return Err(CliError::Config("a reference comparison needs a bulge node set".into())),
        _ => None,
    };
    let delta = metrics.zip(reference_metrics).map(|(g, c)| MetricDeltas {
        tawss_mean: delta_metric(g.tawss_mean, c.tawss_mean),
        peak_wss: delta_metric(g.peak_wss, c.peak_wss),
        osi_max: delta_metric(g.osi_max, c.osi_max),
        systolic_velocity: delta_metric(g.systolic_velocity, c.systolic_velocity),
    });
    let n = wall.wall_nodes.len().max(1) as f64;
    let report = HemoReport {
        wall_nodes: wall.wall_nodes.len(),
        steps: wall.num_steps(),
        tawss_mean_wall: wall.tawss.iter().sum::<f64>() / n,
        osi_max_wall: wall.osi.iter().copied().fold(0.0, f64::max),
        metrics,
        reference_metrics,
        delta,
    };
    inv.out.write_report("report.json", &report, &m)
}

#[derive(Debug, Serialize)]
struct RiskOutput {
    reports: Vec<RiskReport>,
}

pub fn risk(inv: &Invocation) -> CliResult<()> {
    let cfg: config::RiskConfig = config::parse(inv.config_bytes)?;
    let m = RunManifest::new("risk", inv.config_bytes, inv.seed.unwrap_or(0));
    let reports = cfg.metrics.iter().map(|x| assess_risk(x, cfg.tawss_rule)).collect::<hemoflow::Result<Vec<_>>>()?;
    inv.out.write_report("report.json", &RiskOutput { reports }, &m)
}

#[derive(Debug, Serialize)]
struct ScalingOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<ScalingFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<SweepReport>,
}

pub fn scaling(inv: &Invocation) -> CliResult<()> {
    let cfg: config::ScalingConfig = config::parse(inv.config_bytes)?;
    let mut m = RunManifest::new("scaling", inv.config_bytes, inv.seed.unwrap_or(0));
    let out = match cfg.mode {
        ScalingMode::Fit { points } => ScalingOutput { fit: Some(fit_scaling_law(&points)?), sweep: None },
        ScalingMode::Sweep { budgets, grid, corpus, mut settings } => {
            let first = grid.first().ok_or_else(|| CliError::Config("sweep grid is empty".into()))?;
            if let Some(s) = inv.seed {
                settings.seed = s;
            }
            m.seed = settings.seed;
            let setup = desk_setup(first, &corpus, Seeds::from_base(settings.seed).augment)?;
            let report = isoflops_sweep(&budgets, &grid, &setup.corpus, &setup.eval, &settings)?;
            let points = report.optimum_points();
            let distinct = points.windows(2).any(|w| w[0].0 != w[1].0);
            let fit = if distinct { Some(fit_scaling_law(&points)?) } else { None };
            ScalingOutput { fit, sweep: Some(report) }
        }
    };
    inv.out.write_report("report.json", &out, &m)
}
