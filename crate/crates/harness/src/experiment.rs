//! Training, evaluation and transfer runs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use holdlab_core::agent::TrainingStats;
use holdlab_core::agent::{AgentKind, CaacAgent, CaacConfig};
use holdlab_core::baselines::{fh_policy, FhParams, MaddpgAgent};
use holdlab_core::env::{rollout_episode, DecisionContext, EpisodeSummary, RewardConfig};
use holdlab_core::metrics::{compute_metrics, EpisodeMetrics};
use holdlab_core::sim::{build_simulation, RouteSpec, SimState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Nc,
    Fh,
    Iac,
    Maddpg,
    Caac,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Nc,
        PolicyKind::Fh,
        PolicyKind::Iac,
        PolicyKind::Maddpg,
        PolicyKind::Caac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Nc => "nc",
            PolicyKind::Fh => "fh",
            PolicyKind::Iac => "iac",
            PolicyKind::Maddpg => "maddpg",
            PolicyKind::Caac => "caac",
        }
    }

    pub fn is_learned(self) -> bool {
        matches!(
            self,
            PolicyKind::Iac | PolicyKind::Maddpg | PolicyKind::Caac
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::UnknownPolicy(s.to_string()))
    }
}

/// Forward-headway rule settings; the target headway is the route's mean
/// dispatch headway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhSettings {
    pub d_bar: f64,
    pub g: f64,
}

impl Default for FhSettings {
    fn default() -> Self {
        let p = FhParams::for_headway(1.0);
        FhSettings {
            d_bar: p.d_bar,
            g: p.g,
        }
    }
}

impl FhSettings {
    pub fn params(&self, route: &RouteSpec) -> FhParams {
        FhParams {
            h0: route.config.dispatch_mean,
            d_bar: self.d_bar,
            g: self.g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset names or route TOML paths; the first is the training route.
    pub routes: Vec<String>,
    pub policy: PolicyKind,
    pub episodes: usize,
    /// Training seeds.
    pub seeds: Vec<u64>,
    pub eval_seeds: Vec<u64>,
    /// Per-episode demand scale is uniform on this range.
    pub demand_scale: [f64; 2],
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Save a checkpoint every this many episodes.
    pub checkpoint_every: usize,
    pub desk_scale: bool,
    pub agent: CaacConfig,
    pub fh: FhSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            routes: vec!["R1s".into()],
            policy: PolicyKind::Caac,
            episodes: 50,
            seeds: (0..5).collect(),
            eval_seeds: (0..10).collect(),
            demand_scale: [0.8, 1.2],
            out: PathBuf::from("runs"),
            checkpoint: None,
            checkpoint_every: 10,
            desk_scale: true,
            agent: CaacConfig::default(),
            fh: FhSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(HarnessError::Config("episodes must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.routes.is_empty() {
            return Err(HarnessError::Config(
                "at least one route is required".into(),
            ));
        }
        let [lo, hi] = self.demand_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(HarnessError::Config(format!(
                "demand scale range [{lo}, {hi}] is invalid"
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(HarnessError::Config(
                "checkpoint_every must be at least 1".into(),
            ));
        }
        self.agent.validate()?;
        Ok(())
    }

    /// Parses and validates a TOML experiment file.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn route(&self, name: &str) -> Result<RouteSpec> {
        resolve_route(name, self.desk_scale)
    }

    pub fn training_route(&self) -> Result<RouteSpec> {
        self.route(&self.routes[0])
    }
}

/// A preset name, or a path to a route TOML file.
pub fn resolve_route(name: &str, desk: bool) -> Result<RouteSpec> {
    let path = Path::new(name);
    if name.ends_with(".toml") || path.is_file() {
        Ok(RouteSpec::load(path)?)
    } else {
        presets::preset(name, desk)
    }
}

fn draw_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulator seed, demand scale and exploration seed of a training episode.
pub fn episode_draw(seed: u64, episode: usize, scale: [f64; 2]) -> (u64, f64, u64) {
    let mut rng = draw_stream(seed, episode as u64 + 1);
    let sim_seed = rng.random();
    let s = rng.random_range(scale[0]..=scale[1]);
    (sim_seed, s, rng.random())
}

/// Simulator seed and demand scale of an evaluation run.
pub fn eval_draw(seed: u64, scale: [f64; 2]) -> (u64, f64) {
    let mut rng = draw_stream(seed, 0);
    let sim_seed = rng.random();
    (sim_seed, rng.random_range(scale[0]..=scale[1]))
}

pub fn build_scaled(route: &RouteSpec, sim_seed: u64, scale: f64) -> Result<SimState> {
    Ok(build_simulation(
        &route.config,
        &route.demand.scaled(scale),
        sim_seed,
    )?)
}

/// A trainable agent of any learned kind.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // few instances, never in hot collections
pub enum Learner {
    Caac(CaacAgent),
    Maddpg(MaddpgAgent),
}

impl Learner {
    pub fn new(
        kind: PolicyKind,
        config: &CaacConfig,
        route: &RouteSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut config = config.clone();
        config.max_hold = route.config.max_hold;
        Ok(match kind {
            PolicyKind::Caac => Learner::Caac(CaacAgent::new(config, AgentKind::Caac, seed)?),
            PolicyKind::Iac => Learner::Caac(CaacAgent::new(config, AgentKind::Iac, seed)?),
            PolicyKind::Maddpg => {
                Learner::Maddpg(MaddpgAgent::new(config, route.config.n_services, seed)?)
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "policy {other} is not trainable"
                )))
            }
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self {
            Learner::Caac(a) if a.kind() == AgentKind::Caac => PolicyKind::Caac,
            Learner::Caac(_) => PolicyKind::Iac,
            Learner::Maddpg(_) => PolicyKind::Maddpg,
        }
    }

    pub fn config(&self) -> &CaacConfig {
        match self {
            Learner::Caac(a) => a.config(),
            Learner::Maddpg(a) => a.config(),
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        match self {
            Learner::Caac(a) => a.reseed(seed),
            Learner::Maddpg(a) => a.reseed(seed),
        }
    }

    pub fn train_episode(
        &mut self,
        sim: SimState,
        sigma: f64,
    ) -> Result<(TrainingStats, EpisodeSummary)> {
        Ok(match self {
            Learner::Caac(a) => a.train_episode_logged(sim, sigma)?,
            Learner::Maddpg(a) => a.train_episode_logged(sim, sigma)?,
        })
    }

    /// Greedy action in [0, 1].
    pub fn action(&self, ctx: &DecisionContext<'_>) -> f64 {
        let a = match self {
            Learner::Caac(a) => a.policy_action(&ctx.observation),
            Learner::Maddpg(a) => a.policy_action(&ctx.observation),
        };
        a.map(|a| a.value()).unwrap_or(0.0)
    }

    pub fn to_json(&self) -> String {
        match self {
            Learner::Caac(a) => a.to_json(),
            Learner::Maddpg(a) => a.to_json(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    /// Note describing how a fixed-width joint critic met a route's fleet.
    pub fn fleet_note(&self, route: &RouteSpec) -> String {
        let Learner::Maddpg(a) = self else {
            return String::new();
        };
        let fleet = route.config.n_services;
        let n = a.n_slots();
        match fleet.cmp(&n) {
            std::cmp::Ordering::Greater => {
                format!("fleet {fleet} > {n} slots: lowest-index active buses kept")
            }
            std::cmp::Ordering::Less => format!("fleet {fleet} < {n} slots: zero padded"),
            std::cmp::Ordering::Equal => String::new(),
        }
    }
}

/// Loads a checkpoint of any learned kind.
pub fn load_checkpoint(path: &Path) -> Result<Learner> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    learner_from_json(&text)
}

pub fn learner_from_json(text: &str) -> Result<Learner> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let kind: Kind = serde_json::from_str(text).map_err(|e| holdlab_core::Error::Format {
        field: "kind".into(),
        message: e.to_string(),
    })?;
    Ok(if kind.kind == "maddpg" {
        Learner::Maddpg(MaddpgAgent::from_json(text, 0)?)
    } else {
        Learner::Caac(CaacAgent::from_json(text, None, 0)?)
    })
}

/// Loads a checkpoint that must be of kind `expect`.
pub fn load_checkpoint_as(path: &Path, expect: PolicyKind) -> Result<Learner> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(match expect {
        PolicyKind::Caac => Learner::Caac(CaacAgent::from_json(&text, Some(AgentKind::Caac), 0)?),
        PolicyKind::Iac => Learner::Caac(CaacAgent::from_json(&text, Some(AgentKind::Iac), 0)?),
        PolicyKind::Maddpg => Learner::Maddpg(MaddpgAgent::from_json(&text, 0)?),
        other => {
            return Err(HarnessError::Config(format!(
                "policy {other} has no checkpoint"
            )))
        }
    })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// One row of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub sim_seed: u64,
    pub demand_scale: f64,
    pub sigma: f64,
    pub mean_reward: f64,
    pub awt: f64,
    pub aod: f64,
    pub aht: f64,
    pub updates: usize,
    pub critic_loss: f64,
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub learner: Learner,
    pub curve: Vec<CurveRow>,
}

/// Trains one learner from scratch, or from `resume` after
/// `resume.curve.len()` episodes.
pub fn train_run(
    cfg: &ExperimentConfig,
    route: &RouteSpec,
    kind: PolicyKind,
    seed: u64,
    resume: Option<TrainRun>,
    mut on_episode: impl FnMut(&TrainRun) -> Result<()>,
) -> Result<TrainRun> {
    let mut run = match resume {
        Some(r) => r,
        None => TrainRun {
            learner: Learner::new(kind, &cfg.agent, route, seed)?,
            curve: Vec::new(),
        },
    };
    for episode in run.curve.len()..cfg.episodes {
        let (sim_seed, scale, explore) = episode_draw(seed, episode, cfg.demand_scale);
        let sigma = run.learner.config().sigma_at(episode, cfg.episodes);
        run.learner.reseed(explore);
        let (stats, summary) = run
            .learner
            .train_episode(build_scaled(route, sim_seed, scale)?, sigma)?;
        let m = episode_metrics(&summary)?;
        run.curve.push(CurveRow {
            episode,
            sim_seed,
            demand_scale: scale,
            sigma,
            mean_reward: stats.mean_reward,
            awt: m.awt,
            aod: m.aod,
            aht: m.aht,
            updates: stats.updates,
            critic_loss: stats.mean_critic_loss,
            actor_objective: stats.mean_actor_objective,
        });
        on_episode(&run)?;
    }
    Ok(run)
}

pub fn episode_metrics(s: &EpisodeSummary) -> Result<EpisodeMetrics> {
    Ok(compute_metrics(
        &s.config,
        &s.event_log,
        &s.passengers,
        &s.trace(),
    )?)
}

/// A policy ready for evaluation.
#[derive(Debug, Clone, Copy)]
pub enum EvalPolicy<'a> {
    Nc,
    Fh(FhSettings),
    Learned(&'a Learner),
}

impl EvalPolicy<'_> {
    pub fn kind(&self) -> PolicyKind {
        match self {
            EvalPolicy::Nc => PolicyKind::Nc,
            EvalPolicy::Fh(_) => PolicyKind::Fh,
            EvalPolicy::Learned(l) => l.kind(),
        }
    }
}

/// One greedy episode of `policy` on `route`.
pub fn run_policy(
    route: &RouteSpec,
    policy: EvalPolicy<'_>,
    sim_seed: u64,
    scale: f64,
) -> Result<EpisodeSummary> {
    let sim = build_scaled(route, sim_seed, scale)?;
    let reward = RewardConfig::default();
    let c = &route.config;
    Ok(match policy {
        EvalPolicy::Nc => rollout_episode(sim, reward, &mut |_: &DecisionContext<'_>| 0.0)?,
        EvalPolicy::Fh(fh) => {
            let p = fh.params(route);
            p.validate()?;
            rollout_episode(sim, reward, &mut fh_policy(p, c.dispatch_mean, c.max_hold))?
        }
        EvalPolicy::Learned(l) => {
            rollout_episode(sim, reward, &mut |ctx: &DecisionContext<'_>| l.action(ctx))?
        }
    })
}

/// One row of an evaluation table, with deltas against no control on the
/// same seed and demand scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub route: String,
    pub policy: String,
    pub seed: u64,
    pub demand_scale: f64,
    pub aht: f64,
    pub awt: f64,
    pub ajt: f64,
    pub att: f64,
    pub aod: f64,
    pub dispatch_cv2: Option<f64>,
    pub downstream_cv2: Option<f64>,
    pub d_aht: f64,
    pub d_awt: f64,
    pub d_att: f64,
    pub d_aod: f64,
    pub note: String,
}

impl MetricsRow {
    pub fn new(
        route: &str,
        policy: &str,
        seed: u64,
        scale: f64,
        m: &EpisodeMetrics,
        nc: &EpisodeMetrics,
    ) -> Self {
        MetricsRow {
            route: route.to_string(),
            policy: policy.to_string(),
            seed,
            demand_scale: scale,
            aht: m.aht,
            awt: m.awt,
            ajt: m.ajt,
            att: m.att,
            aod: m.aod,
            dispatch_cv2: m.dispatch_cv2(),
            downstream_cv2: m.downstream_cv2(),
            d_aht: m.aht - nc.aht,
            d_awt: m.awt - nc.awt,
            d_att: m.att - nc.att,
            d_aod: m.aod - nc.aod,
            note: String::new(),
        }
    }
}

/// Evaluates each policy on every seed. A no-control row is always
/// included first per seed as the reference.
pub fn evaluate(
    route: &RouteSpec,
    policies: &[(String, EvalPolicy<'_>)],
    seeds: &[u64],
    scale: [f64; 2],
) -> Result<Vec<MetricsRow>> {
    evaluate_with(route, policies, seeds, scale, |_, _, _| Ok(()))
}

/// As [`evaluate`], handing every episode to `sink` with its policy label
/// and seed.
pub fn evaluate_with(
    route: &RouteSpec,
    policies: &[(String, EvalPolicy<'_>)],
    seeds: &[u64],
    scale: [f64; 2],
    mut sink: impl FnMut(&str, u64, &EpisodeSummary) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let (sim_seed, s) = eval_draw(seed, scale);
        let nc_run = run_policy(route, EvalPolicy::Nc, sim_seed, s)?;
        sink("nc", seed, &nc_run)?;
        let nc = episode_metrics(&nc_run)?;
        rows.push(MetricsRow::new(&route.name, "nc", seed, s, &nc, &nc));
        for (label, p) in policies {
            if matches!(p, EvalPolicy::Nc) {
                continue;
            }
            let run = run_policy(route, *p, sim_seed, s)?;
            sink(label, seed, &run)?;
            let m = episode_metrics(&run)?;
            let mut row = MetricsRow::new(&route.name, label, seed, s, &m, &nc);
            if let EvalPolicy::Learned(l) = p {
                row.note = l.fleet_note(route);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}
