//! The command implementations behind the CLI.

use std::fs::File;
use std::path::{Path, PathBuf};

use holdlab_core::env::EpisodeSummary;
use holdlab_core::io::{
    read_rows, write_event_log, write_file, write_passengers, write_rows, write_trace,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiment::{
    eval_draw, evaluate_with, load_checkpoint_as, run_policy, train_run, write_atomic, EvalPolicy,
    ExperimentConfig, Learner, MetricsRow, PolicyKind, TrainRun,
};
use crate::svg::{emit_trajectory_svg, min_arrival_gap};

pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PROGRESS_FILE: &str = "progress.json";

/// Sidecar recording how many curve rows the saved checkpoint covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub policy: PolicyKind,
    pub seed: u64,
    pub route: String,
    pub episodes_done: usize,
}

pub fn run_dir(out: &Path, policy: PolicyKind, seed: u64) -> PathBuf {
    out.join(format!("{policy}-seed{seed}"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        HarnessError::Core(holdlab_core::Error::Format {
            field: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

pub fn read_curve(path: &Path) -> Result<Vec<crate::experiment::CurveRow>> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(read_rows(f)?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    write_atomic(path, &buf)
}

/// Picks up a previous run in `dir` if its checkpoint and progress agree.
fn resume_state(dir: &Path, policy: PolicyKind, seed: u64) -> Result<Option<TrainRun>> {
    let progress_path = dir.join(PROGRESS_FILE);
    if !progress_path.exists() {
        return Ok(None);
    }
    let progress: Progress = read_json(&progress_path)?;
    if progress.policy != policy || progress.seed != seed {
        return Err(HarnessError::Config(format!(
            "{} belongs to {} seed {}",
            dir.display(),
            progress.policy,
            progress.seed
        )));
    }
    let learner = load_checkpoint_as(&dir.join(CHECKPOINT_FILE), policy)?;
    let mut curve = read_curve(&dir.join(CURVE_FILE))?;
    if curve.len() < progress.episodes_done {
        return Err(HarnessError::Config(format!(
            "{} has fewer curve rows than checkpointed episodes",
            dir.display()
        )));
    }
    curve.truncate(progress.episodes_done);
    Ok(Some(TrainRun { learner, curve }))
}

fn save_run(dir: &Path, route: &str, policy: PolicyKind, seed: u64, run: &TrainRun) -> Result<()> {
    write_csv(&dir.join(CURVE_FILE), &run.curve)?;
    run.learner.save(&dir.join(CHECKPOINT_FILE))?;
    let progress = Progress {
        policy,
        seed,
        route: route.to_string(),
        episodes_done: run.curve.len(),
    };
    write_atomic(
        &dir.join(PROGRESS_FILE),
        serde_json::to_string_pretty(&progress)
            .expect("serializes")
            .as_bytes(),
    )
}

/// Trains one learner per seed, writing curve, checkpoint and progress
/// under `out/<policy>-seed<k>`. Existing progress is resumed.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if !cfg.policy.is_learned() {
        return Err(HarnessError::Config(format!(
            "policy {} has nothing to train",
            cfg.policy
        )));
    }
    let route = cfg.training_route()?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let dir = run_dir(&cfg.out, cfg.policy, seed);
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let resume = resume_state(&dir, cfg.policy, seed)?;
        let every = cfg.checkpoint_every;
        let run = train_run(cfg, &route, cfg.policy, seed, resume, |run| {
            if run.curve.len() % every == 0 {
                save_run(&dir, &route.name, cfg.policy, seed, run)?;
            }
            Ok(())
        })?;
        save_run(&dir, &route.name, cfg.policy, seed, &run)?;
        if let (Some(path), 1) = (&cfg.checkpoint, cfg.seeds.len()) {
            run.learner.save(path)?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Policies to evaluate, with their checkpoints loaded.
pub fn load_policies(
    policies: &[PolicyKind],
    checkpoints: &[PathBuf],
) -> Result<Vec<(PolicyKind, Option<Learner>)>> {
    let mut ck = checkpoints.iter();
    policies
        .iter()
        .map(|&p| {
            if p.is_learned() {
                let path = ck.next().ok_or_else(|| {
                    HarnessError::Config(format!("policy {p} needs a checkpoint"))
                })?;
                Ok((p, Some(load_checkpoint_as(path, p)?)))
            } else {
                Ok((p, None))
            }
        })
        .collect()
}

fn eval_policies<'a>(
    cfg: &ExperimentConfig,
    loaded: &'a [(PolicyKind, Option<Learner>)],
) -> Vec<(String, EvalPolicy<'a>)> {
    loaded
        .iter()
        .map(|(p, l)| {
            let e = match (p, l) {
                (_, Some(l)) => EvalPolicy::Learned(l),
                (PolicyKind::Fh, None) => EvalPolicy::Fh(cfg.fh),
                _ => EvalPolicy::Nc,
            };
            (p.name().to_string(), e)
        })
        .collect()
}

fn log_sink<'a>(
    dir: Option<&'a Path>,
    route: &'a str,
) -> impl FnMut(&str, u64, &EpisodeSummary) -> Result<()> + 'a {
    move |policy, seed, s| {
        let Some(dir) = dir else { return Ok(()) };
        let base = dir.join("logs").join(route);
        let stem = format!("{policy}-seed{seed}");
        write_file(&base.join(format!("{stem}-events.csv")), |b| {
            write_event_log(b, &s.event_log)
        })?;
        write_file(&base.join(format!("{stem}-passengers.csv")), |b| {
            write_passengers(b, &s.passengers)
        })?;
        write_file(&base.join(format!("{stem}-trace.csv")), |b| {
            write_trace(b, &s.trace())
        })?;
        Ok(())
    }
}

/// Evaluates policies on every route in `cfg.routes`, writing one combined
/// metrics CSV. With `logs`, raw logs of every episode are kept as well.
pub fn cmd_transfer(
    cfg: &ExperimentConfig,
    policies: &[PolicyKind],
    checkpoints: &[PathBuf],
    logs: bool,
) -> Result<(PathBuf, Vec<MetricsRow>)> {
    if cfg.eval_seeds.is_empty() {
        return Err(HarnessError::Config(
            "at least one evaluation seed is required".into(),
        ));
    }
    let loaded = load_policies(policies, checkpoints)?;
    let evals = eval_policies(cfg, &loaded);
    let mut rows = Vec::new();
    for name in &cfg.routes {
        let route = cfg.route(name)?;
        let sink = log_sink(logs.then_some(cfg.out.as_path()), &route.name);
        rows.extend(evaluate_with(
            &route,
            &evals,
            &cfg.eval_seeds,
            cfg.demand_scale,
            sink,
        )?);
    }
    let path = cfg.out.join("metrics.csv");
    write_csv(&path, &rows)?;
    Ok((path, rows))
}

/// Evaluation on the first route only.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    policies: &[PolicyKind],
    checkpoints: &[PathBuf],
    logs: bool,
) -> Result<(PathBuf, Vec<MetricsRow>)> {
    let single = ExperimentConfig {
        routes: cfg.routes[..1].to_vec(),
        ..cfg.clone()
    };
    cmd_transfer(&single, policies, checkpoints, logs)
}

/// Renders the trajectories of one evaluation episode. Returns the
/// smallest arrival gap in the plotted log.
pub fn cmd_plot(
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    checkpoint: Option<&Path>,
    seed: u64,
    path: &Path,
) -> Result<Option<f64>> {
    let route = cfg.training_route()?;
    let loaded = load_policies(&[policy], checkpoint.map(Path::to_path_buf).as_slice())?;
    let evals = eval_policies(cfg, &loaded);
    let (sim_seed, scale) = eval_draw(seed, cfg.demand_scale);
    let s = run_policy(&route, evals[0].1, sim_seed, scale)?;
    let title = format!(
        "{} {} seed {seed}",
        route.name,
        policy.name().to_uppercase()
    );
    emit_trajectory_svg(&route.config, &s.event_log, &title, path)?;
    Ok(min_arrival_gap(&s.event_log))
}
