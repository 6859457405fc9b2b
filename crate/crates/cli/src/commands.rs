//! Subcommand implementations. Every command writes its outputs under the
//! output directory with stable names so reruns overwrite byte-identically.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use helm_core::bench::{build_scenario, compare as compare_metrics, run_scenario, RunMetrics, Scenario, Trajectory};
use helm_core::ppo::{self, evaluate_policy, select_policy, EvalSummary, Trainer, EVALUATION_SEED_OFFSET};
use helm_core::{Checkpoint, Controller, Error, PpoController, RunConfig};
use serde::Serialize;

use crate::{Common, ControllerKind};

/// A command error with its process exit code.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

fn config_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

fn run_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn training_error(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 3, error: error.into() }
}

/// Caps the global thread pool at `HELM_RL_THREADS` when set.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("HELM_RL_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| anyhow!("HELM_RL_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display())).map_err(config_error)?;
            RunConfig::from_json(&text).with_context(|| format!("invalid config {}", p.display())).map_err(config_error)
        }
    }
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).map_err(config_error)?;
    Ok((cfg, out))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display())).map_err(config_error)?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("loading checkpoint {}", path.display())).map_err(config_error)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(run_error)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(run_error)?;
    text.push('\n');
    write(path, text)
}

fn controller(kind: ControllerKind, cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Box<dyn Controller>, Failure> {
    Ok(match kind {
        ControllerKind::Pd => Box::new(cfg.pd_controller().map_err(config_error)?),
        ControllerKind::Ppo => {
            let path = checkpoint.ok_or_else(|| config_error(anyhow!("the PPO controller needs --checkpoint")))?;
            Box::new(PpoController::new(load_checkpoint(path)?.policy()))
        }
    })
}

fn scenario(cfg: &RunConfig, name: Option<&str>) -> Result<Scenario, Failure> {
    let name = name.unwrap_or(&cfg.scenario.name);
    let spec = cfg.find_scenario(name).map_err(config_error)?;
    build_scenario(&spec, &cfg.model(), cfg.episode.tolerance_l).map_err(config_error)
}

fn run(cfg: &RunConfig, sc: &Scenario, ctrl: &dyn Controller) -> Result<(Trajectory, RunMetrics), Failure> {
    let model = cfg.model();
    run_scenario(sc, ctrl, &model, &cfg.wind.load_model, cfg.episode.dt(&model), cfg.scenario.step_cap).map_err(run_error)
}

fn write_run(out: &Path, stem: &str, traj: &Trajectory, metrics: &RunMetrics) -> Result<(), Failure> {
    write(&out.join(format!("{stem}_trajectory.csv")), traj.to_csv().map_err(run_error)?)?;
    write_json(&out.join(format!("{stem}_metrics.json")), metrics)
}

fn print_metrics(m: &RunMetrics) {
    println!(
        "{:<20} {:<4} success={} waypoints={}/{} steps={} rms_d_c={:.4}L post={:.4}L effort={:.6}rad/s",
        m.scenario,
        m.controller,
        m.success,
        m.waypoints_captured,
        m.waypoints_total,
        m.steps,
        m.rms_cross_track,
        m.rms_cross_track_post,
        m.rudder_effort
    );
}

pub fn simulate(common: &Common, name: Option<&str>, kind: ControllerKind, checkpoint: Option<&Path>) -> CmdResult {
    let (cfg, out) = resolve(common)?;
    let sc = scenario(&cfg, name)?;
    let ctrl = controller(kind, &cfg, checkpoint)?;
    let (traj, metrics) = run(&cfg, &sc, ctrl.as_ref())?;
    write(&out.join(format!("{}_waypoints.csv", sc.name)), sc.path.to_csv())?;
    write_run(&out, &format!("{}_{}", sc.name, kind.label()), &traj, &metrics)?;
    print_metrics(&metrics);
    if metrics.success {
        Ok(())
    } else {
        Err(run_error(anyhow!("{}: {}", sc.name, metrics.failure.as_deref().unwrap_or("run failed"))))
    }
}

#[derive(Serialize)]
struct SelectionReport {
    selected_iteration: usize,
    selection_episodes: usize,
    candidates: Vec<Candidate>,
}

#[derive(Serialize)]
struct Candidate {
    iteration: usize,
    #[serde(flatten)]
    summary: EvalSummary,
}

pub fn train(common: &Common, iterations: Option<usize>) -> CmdResult {
    let (mut cfg, out) = resolve(common)?;
    if let Some(n) = iterations {
        cfg.ppo.iterations = n;
        cfg.validate().map_err(config_error)?;
    }
    let ck_dir = out.join("checkpoints");
    fs::create_dir_all(&ck_dir).with_context(|| format!("creating {}", ck_dir.display())).map_err(config_error)?;
    write_json(&out.join("resolved_config.json"), &cfg)?;

    let model = cfg.model();
    let trainer = Trainer::new(cfg.ppo.clone(), cfg.episode, model, cfg.wind.wind(), cfg.seed).map_err(config_error)?;
    let mut logs = Vec::new();
    let mut candidates = Vec::new();
    let result = ppo::train(trainer, |log, t| {
        eprintln!(
            "iter {:>3}  return {:>9.2}  success {:>4.0}%  entropy {:>6.3}  lr {:.2e}{}",
            log.iteration,
            log.mean_return,
            100.0 * log.success_rate,
            log.entropy,
            log.lr,
            if log.aborted { "  (aborted)" } else { "" }
        );
        let path = ck_dir.join(format!("iter_{:03}.ckpt", log.iteration));
        fs::write(&path, t.checkpoint().to_bytes()?)?;
        logs.push(log.clone());
        candidates.push((log.iteration, t.policy()));
        Ok(())
    });
    write(&out.join("training_log.csv"), ppo::training_log_csv(&logs))?;
    if let Err(e) = result {
        return Err(training_error(e));
    }

    let (best, summaries) = select_policy(&candidates, &model, &cfg.episode, cfg.seed, cfg.ppo.selection_episodes).map_err(training_error)?;
    let chosen = summaries[best].0;
    fs::copy(ck_dir.join(format!("iter_{chosen:03}.ckpt")), out.join("selected.ckpt"))
        .context("copying the selected checkpoint")
        .map_err(run_error)?;
    let report = SelectionReport {
        selected_iteration: chosen,
        selection_episodes: cfg.ppo.selection_episodes,
        candidates: summaries.into_iter().map(|(iteration, summary)| Candidate { iteration, summary }).collect(),
    };
    write_json(&out.join("selection.json"), &report)?;
    println!(
        "selected iteration {chosen}: success {:.0}% on {} held-out episodes -> {}",
        100.0 * report.candidates[best].summary.success_rate,
        cfg.ppo.selection_episodes,
        out.join("selected.ckpt").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint_iteration: usize,
    fresh_episodes: EvalSummary,
    quadrants: Vec<RunMetrics>,
}

pub fn eval(common: &Common, checkpoint: &Path, episodes: usize) -> CmdResult {
    let (cfg, out) = resolve(common)?;
    if episodes == 0 {
        return Err(config_error(anyhow!("--episodes must be positive")));
    }
    let ck = load_checkpoint(checkpoint)?;
    let model = cfg.model();
    let policy = ck.policy();
    let wind = cfg.wind.wind();
    let fresh = evaluate_policy(&policy, &model, wind.as_ref(), &cfg.episode, cfg.seed, EVALUATION_SEED_OFFSET, episodes)
        .map_err(run_error)?;
    let ctrl = PpoController::new(policy);
    let mut quadrants = Vec::new();
    for spec in cfg.suite().iter().filter(|s| s.name.starts_with("quadrant_")) {
        let sc = build_scenario(spec, &model, cfg.episode.tolerance_l).map_err(config_error)?;
        let (traj, m) = run(&cfg, &sc, &ctrl)?;
        write_run(&out, &format!("{}_ppo", sc.name), &traj, &m)?;
        print_metrics(&m);
        quadrants.push(m);
    }
    println!(
        "fresh episodes: {} run, success {:.1}%, mean return {:.2}, rms d_c {:.3}L",
        fresh.episodes,
        100.0 * fresh.success_rate,
        fresh.mean_return,
        fresh.rms_cross_track
    );
    write_json(&out.join("eval.json"), &EvalReport { checkpoint_iteration: ck.iteration, fresh_episodes: fresh, quadrants })
}

pub fn compare(common: &Common, name: Option<&str>, checkpoint: Option<&Path>, a: ControllerKind, b: ControllerKind) -> CmdResult {
    let (cfg, out) = resolve(common)?;
    let sc = scenario(&cfg, name)?;
    let ca = controller(a, &cfg, checkpoint)?;
    let cb = controller(b, &cfg, checkpoint)?;
    let (ta, ma) = run(&cfg, &sc, ca.as_ref())?;
    let (tb, mb) = run(&cfg, &sc, cb.as_ref())?;
    let stem_a = format!("{}_a_{}", sc.name, a.label());
    let stem_b = format!("{}_b_{}", sc.name, b.label());
    write(&out.join(format!("{}_waypoints.csv", sc.name)), sc.path.to_csv())?;
    write_run(&out, &stem_a, &ta, &ma)?;
    write_run(&out, &stem_b, &tb, &mb)?;
    let report = compare_metrics(&ma, &mb);
    write_json(&out.join(format!("compare_{}.json", sc.name)), &report)?;

    println!("{:<10} {:>10} {:>12} {:>14} {:>8}", "controller", "success", "rms d_c (L)", "effort (rad/s)", "steps");
    for (label, m) in [(format!("A:{}", a.label()), &ma), (format!("B:{}", b.label()), &mb)] {
        println!("{:<10} {:>10} {:>12.4} {:>14.6} {:>8}", label, m.success, m.rms_cross_track, m.rudder_effort, m.steps);
    }
    // Percentages against a reference that never left the path are noise.
    let reduction = if mb.rms_cross_track > 1e-6 { format!("{:.1}%", report.rms_reduction_pct) } else { "n/a".into() };
    let ratio = if mb.rudder_effort > 1e-9 { format!("{:.3}", report.effort_ratio) } else { "n/a".into() };
    println!(
        "RMS cross-track reduction (B -> A): {reduction}   effort ratio A/B: {ratio}{}",
        if report.valid { "" } else { "   [invalid: a run failed]" }
    );
    if report.valid {
        Ok(())
    } else {
        Err(run_error(anyhow!("comparison on {} is invalid: at least one run failed", sc.name)))
    }
}

pub fn list_scenarios(config: Option<&Path>) -> CmdResult {
    let cfg = load_config(config)?;
    for spec in cfg.suite() {
        let path = serde_json::to_string(&spec.path).map_err(run_error)?;
        match spec.wind {
            Some(w) => println!("{:<20} {path} wind {}xU toward {} deg", spec.name, w.speed_u, w.direction_deg_toward),
            None => println!("{:<20} {path}", spec.name),
        }
    }
    Ok(())
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::Json(_) | Error::Checkpoint(_) => config_error(e),
            Error::TrainingFailed { .. } | Error::IterationAborted { .. } => training_error(e),
            _ => run_error(e),
        }
    }
}
