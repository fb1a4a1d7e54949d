use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::collect::TransitionCollector;
use super::event_critic::{ego_features, EventBatch, EventCritic, NODE_DIM};
use super::{
    obs_matrix, select_action, soft_update, CaacConfig, ReplayBuffer, Transition, OUTPUT_INIT_BOUND,
};
use crate::env::{
    DecisionContext, Episode, EpisodeSummary, HoldingAction, Observation, RewardConfig,
};
use crate::error::{Error, Result};
use crate::neural::{
    Activation, Adam, Bound, LayerSpec, Mlp, ParamDocument, ParameterSet, Tape, Tensor, Var,
};
use crate::sim::SimState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Caac,
    Iac,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Caac => "caac",
            AgentKind::Iac => "iac",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Nets {
    actor: ParameterSet,
    critic: ParameterSet,
    event: Option<ParameterSet>,
}

/// Loss values of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Summary of one training episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingStats {
    pub decisions: usize,
    pub mean_reward: f64,
    pub updates: usize,
    pub mean_critic_loss: f64,
    pub mean_actor_objective: f64,
}

/// Actor, ego critic, optional event critic, their targets and optimizers.
#[derive(Debug, Clone)]
pub struct CaacAgent {
    config: CaacConfig,
    actor: Mlp,
    critic: Mlp,
    event: Option<EventCritic>,
    nets: Nets,
    targets: Nets,
    actor_opt: Adam,
    critic_opt: Adam,
    event_opt: Option<Adam>,
    buffer: ReplayBuffer<Transition>,
    rng: ChaCha8Rng,
    updates: u64,
}

fn actor_spec(hidden: usize) -> LayerSpec {
    LayerSpec::new(
        vec![Observation::DIM, hidden, hidden, 1],
        Activation::Tanh,
        Activation::Sigmoid,
    )
}

fn critic_spec(hidden: usize) -> LayerSpec {
    LayerSpec::new(
        vec![Observation::DIM + 1, hidden, hidden, 1],
        Activation::Tanh,
        Activation::Identity,
    )
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

impl CaacAgent {
    /// Fresh agent; the event critic draws from its own random stream so that
    /// enabling it does not change the other networks' initialization.
    pub fn new(config: CaacConfig, kind: AgentKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = stream(seed, 0);
        let mut actor_p = ParameterSet::new();
        let actor = Mlp::init_with_output_bound(
            &mut actor_p,
            "actor",
            actor_spec(config.hidden),
            Some(OUTPUT_INIT_BOUND),
            &mut init,
        )?;
        let mut critic_p = ParameterSet::new();
        let critic = Mlp::init_with_output_bound(
            &mut critic_p,
            "critic",
            critic_spec(config.hidden),
            Some(OUTPUT_INIT_BOUND),
            &mut init,
        )?;
        let (event, event_p) = match kind {
            AgentKind::Iac => (None, None),
            AgentKind::Caac => {
                let mut p = ParameterSet::new();
                let e = EventCritic::init(&mut p, config.event, &mut stream(seed, 1))?;
                (Some(e), Some(p))
            }
        };
        let nets = Nets {
            actor: actor_p,
            critic: critic_p,
            event: event_p,
        };
        Ok(Self::assemble(
            config,
            actor,
            critic,
            event,
            nets.clone(),
            nets,
            seed,
        ))
    }

    fn assemble(
        config: CaacConfig,
        actor: Mlp,
        critic: Mlp,
        event: Option<EventCritic>,
        nets: Nets,
        targets: Nets,
        seed: u64,
    ) -> Self {
        let actor_opt = Adam::new(&nets.actor, config.actor_lr);
        let critic_opt = Adam::new(&nets.critic, config.critic_lr);
        let event_opt = nets.event.as_ref().map(|p| Adam::new(p, config.event_lr));
        CaacAgent {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            actor,
            critic,
            event,
            nets,
            targets,
            actor_opt,
            critic_opt,
            event_opt,
            rng: stream(seed, 2),
            updates: 0,
        }
    }

    pub fn kind(&self) -> AgentKind {
        if self.event.is_some() {
            AgentKind::Caac
        } else {
            AgentKind::Iac
        }
    }

    pub fn config(&self) -> &CaacConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn buffer(&self) -> &ReplayBuffer<Transition> {
        &self.buffer
    }

    pub fn actor_params(&self) -> &ParameterSet {
        &self.nets.actor
    }

    pub fn critic_params(&self) -> &ParameterSet {
        &self.nets.critic
    }

    pub fn event_params(&self) -> Option<&ParameterSet> {
        self.nets.event.as_ref()
    }

    pub fn event_critic(&self) -> Option<&EventCritic> {
        self.event.as_ref()
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    /// Mutable parameter access for fixtures and experiments.
    pub fn params_mut(
        &mut self,
    ) -> (
        &mut ParameterSet,
        &mut ParameterSet,
        Option<&mut ParameterSet>,
    ) {
        (
            &mut self.nets.actor,
            &mut self.nets.critic,
            self.nets.event.as_mut(),
        )
    }

    /// Makes the targets exact copies of the online networks.
    pub fn sync_targets(&mut self) {
        self.targets = self.nets.clone();
    }

    /// Zeroes the event critic and its target so it outputs zero everywhere.
    pub fn zero_event_critic(&mut self) {
        for nets in [&mut self.nets, &mut self.targets] {
            if let Some(p) = nets.event.as_mut() {
                p.map_values(|_| 0.0);
            }
        }
        if let Some(p) = &self.nets.event {
            self.event_opt = Some(Adam::new(p, self.config.event_lr));
        }
    }

    /// Restarts the sampling and exploration stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = stream(seed, 2);
    }

    pub fn store(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn act(&mut self, obs: &Observation, sigma: f64) -> Result<HoldingAction> {
        select_action(&self.actor, &self.nets.actor, obs, sigma, &mut self.rng)
    }

    /// Deterministic action, usable from shared references.
    pub fn policy_action(&self, obs: &Observation) -> Result<HoldingAction> {
        let a = self
            .actor
            .predict(&self.nets.actor, &obs_matrix([obs]))?
            .item();
        HoldingAction::new(a.clamp(0.0, 1.0))
    }

    /// `Q(s, a)` from the online ego critic.
    pub fn q_value(&self, obs: &Observation, a: f64) -> Result<f64> {
        let [o, f, b] = obs.to_array();
        Ok(self
            .critic
            .predict(&self.nets.critic, &Tensor::row(&[o, f, b, a]))?
            .item())
    }

    /// Bootstrap targets `r + gamma (Q'(s', mu'(s')) + U'(s', mu'(s'), next window))`.
    pub fn td_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
        for &i in &live {
            if batch[i].next_obs.is_none() || batch[i].next_window.is_none() {
                return Err(Error::Data(
                    "non-terminal transition without next-window data".into(),
                ));
            }
        }
        if live.is_empty() {
            return Ok(y);
        }
        let next = obs_matrix(
            live.iter()
                .map(|&i| batch[i].next_obs.as_ref().expect("checked")),
        );
        let mu = self.actor.predict(&self.targets.actor, &next)?;
        let mut input = Vec::with_capacity(live.len() * 4);
        for (k, &i) in live.iter().enumerate() {
            input.extend_from_slice(&batch[i].next_obs.expect("checked").to_array());
            input.push(mu.data()[k]);
        }
        let q = self.critic.predict(
            &self.targets.critic,
            &Tensor::from_vec(live.len(), 4, input)?,
        )?;
        let u = match (&self.event, &self.targets.event) {
            (Some(ec), Some(p)) => {
                let mut eb = EventBatch::default();
                for (k, &i) in live.iter().enumerate() {
                    let obs = batch[i].next_obs.expect("checked");
                    eb.push(
                        &ego_features(&obs, mu.data()[k]),
                        batch[i].next_window.as_ref().expect("checked"),
                    );
                }
                let mut tape = Tape::new();
                let bound = p.bind_frozen(&mut tape);
                let out = ec.forward(&mut tape, &bound, &eb)?;
                Some(tape.value(out.u).data().to_vec())
            }
            _ => None,
        };
        for (k, &i) in live.iter().enumerate() {
            let g = match &u {
                Some(u) => q.data()[k] + u[k],
                None => q.data()[k],
            };
            y[i] += self.config.gamma * g;
        }
        Ok(y)
    }

    /// Records the critic loss for `batch` against fixed `targets`, binding
    /// the online critics as trainable leaves.
    fn critic_graph(
        &self,
        tape: &mut Tape,
        batch: &[&Transition],
        targets: &[f64],
    ) -> Result<(Var, Bound, Option<Bound>)> {
        let critic_b = self.nets.critic.bind(tape);
        let event_b = self.nets.event.as_ref().map(|p| p.bind(tape));
        let loss = self.critic_loss_on(tape, &critic_b, event_b.as_ref(), batch, targets)?;
        Ok((loss, critic_b, event_b))
    }

    /// Critic loss with caller-bound parameters.
    pub fn critic_loss_on(
        &self,
        tape: &mut Tape,
        critic_b: &Bound,
        event_b: Option<&Bound>,
        batch: &[&Transition],
        targets: &[f64],
    ) -> Result<Var> {
        let n = batch.len();
        let mut input = Vec::with_capacity(n * 4);
        for t in batch {
            input.extend_from_slice(&t.obs.to_array());
            input.push(t.action);
        }
        let x = tape.constant(Tensor::from_vec(n, 4, input)?);
        let q = self.critic.forward(tape, critic_b, x)?;
        let mut g = q;
        let mut penalty = None;
        if let (Some(ec), Some(b)) = (&self.event, event_b) {
            let mut eb = EventBatch::default();
            for t in batch {
                eb.push(&ego_features(&t.obs, t.action), &t.window);
            }
            let out = ec.forward(tape, b, &eb)?;
            g = tape.add(q, out.u)?;
            let pen = ec.empty_penalty(tape, &out, &eb)?;
            penalty = Some(tape.scale(pen, self.config.beta / n as f64));
        }
        let y = tape.constant(Tensor::column(targets));
        let td = tape.sub(g, y)?;
        let sq = tape.square(td);
        let mut loss = tape.mean(sq);
        if let Some(p) = penalty {
            loss = tape.add(loss, p)?;
        }
        Ok(loss)
    }

    /// One critic step, one actor step and a soft target update on a
    /// sampled batch. Does nothing until the buffer holds a full batch.
    pub fn update(&mut self) -> Result<Option<UpdateStats>> {
        if self.buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch: Vec<Transition> = self
            .buffer
            .sample_batch(self.config.batch_size, &mut self.rng)?
            .into_iter()
            .cloned()
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        self.update_on(&refs).map(Some)
    }

    /// The update step on an explicit batch.
    pub fn update_on(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let targets = self.td_targets(batch)?;
        let mut tape = Tape::new();
        let (loss, critic_b, event_b) = self.critic_graph(&mut tape, batch, &targets)?;
        let critic_loss = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let g = critic_b.gradients(&grads, &self.nets.critic);
        self.critic_opt.step(&mut self.nets.critic, &g)?;
        if let (Some(b), Some(p), Some(opt)) =
            (event_b, self.nets.event.as_mut(), self.event_opt.as_mut())
        {
            let g = b.gradients(&grads, p);
            opt.step(p, &g)?;
        }

        let (objective, g) = match (&self.event, &self.nets.event) {
            (Some(ec), Some(ep)) if self.config.actor_includes_event => inductive_actor_gradient(
                &self.actor,
                &self.nets.actor,
                &self.critic,
                &self.nets.critic,
                ec,
                ep,
                batch,
            )?,
            _ => actor_gradient(
                &self.actor,
                &self.nets.actor,
                &self.critic,
                &self.nets.critic,
                batch,
            )?,
        };
        // Ascent on the objective.
        let g: Vec<Tensor> = g.into_iter().map(|t| t.map(|x| -x)).collect();
        self.actor_opt.step(&mut self.nets.actor, &g)?;

        let tau = self.config.tau;
        soft_update(&mut self.targets.actor, &self.nets.actor, tau)?;
        soft_update(&mut self.targets.critic, &self.nets.critic, tau)?;
        if let (Some(t), Some(s)) = (self.targets.event.as_mut(), self.nets.event.as_ref()) {
            soft_update(t, s, tau)?;
        }
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_objective: objective,
        })
    }

    /// Runs one exploring episode, storing transitions and updating once per decision.
    pub fn train_episode(&mut self, sim: SimState, sigma: f64) -> Result<TrainingStats> {
        self.train_episode_logged(sim, sigma).map(|(s, _)| s)
    }

    /// As [`Self::train_episode`], also returning the episode logs.
    pub fn train_episode_logged(
        &mut self,
        sim: SimState,
        sigma: f64,
    ) -> Result<(TrainingStats, EpisodeSummary)> {
        let reward = RewardConfig {
            w: self.config.w,
            gamma: self.config.gamma,
        };
        let mut episode = Episode::new(sim, reward)?;
        if (episode.sim().config().max_hold - self.config.max_hold).abs() > 0.0 {
            return Err(Error::Config(
                "route and agent disagree on the maximum hold".into(),
            ));
        }
        let mut collector = TransitionCollector::new();
        let mut stats = TrainingStats::default();
        while let Some(idx) = episode.next_decision()? {
            for t in collector.drain_transitions(&episode, false) {
                self.store(t);
            }
            let obs = episode.decision(idx).observation;
            let a = self.act(&obs, sigma)?;
            episode.act(a.value())?;
            for _ in 0..self.config.updates_per_step {
                if let Some(u) = self.update()? {
                    stats.updates += 1;
                    stats.mean_critic_loss += u.critic_loss;
                    stats.mean_actor_objective += u.actor_objective;
                }
            }
        }
        for t in collector.drain_transitions(&episode, true) {
            self.store(t);
        }
        let rewards: Vec<f64> = episode
            .decisions()
            .iter()
            .filter_map(|d| d.reward)
            .collect();
        stats.decisions = episode.decisions().len();
        if !rewards.is_empty() {
            stats.mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        }
        if stats.updates > 0 {
            stats.mean_critic_loss /= stats.updates as f64;
            stats.mean_actor_objective /= stats.updates as f64;
        }
        Ok((stats, episode.finish()))
    }

    /// Greedy policy for evaluation.
    pub fn policy(&self) -> impl FnMut(&DecisionContext<'_>) -> f64 + '_ {
        move |ctx| {
            self.policy_action(&ctx.observation)
                .map(|a| a.value())
                .unwrap_or(0.0)
        }
    }

    pub fn to_checkpoint(&self) -> CaacCheckpoint {
        CaacCheckpoint {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind(),
            config: self.config.clone(),
            updates: self.updates,
            actor: self.nets.actor.to_document(),
            critic: self.nets.critic.to_document(),
            event_critic: self.nets.event.as_ref().map(|p| p.to_document()),
            actor_target: self.targets.actor.to_document(),
            critic_target: self.targets.critic.to_document(),
            event_critic_target: self.targets.event.as_ref().map(|p| p.to_document()),
            actor_optimizer: self.actor_opt.clone(),
            critic_optimizer: self.critic_opt.clone(),
            event_optimizer: self.event_opt.clone(),
        }
    }

    /// Rebuilds an agent; `expect` rejects checkpoints of the other kind.
    pub fn from_checkpoint(
        ck: &CaacCheckpoint,
        expect: Option<AgentKind>,
        seed: u64,
    ) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "format_version",
                format!(
                    "unsupported version {} (expected {CHECKPOINT_VERSION})",
                    ck.format_version
                ),
            ));
        }
        ck.config
            .validate()
            .map_err(|e| Error::format("config", e.to_string()))?;
        let want = expect.unwrap_or(ck.kind);
        let kind_has_event = ck.event_critic.is_some();
        if want == AgentKind::Caac && !kind_has_event {
            return Err(Error::format(
                "event_critic",
                "missing event-critic block (checkpoint holds an independent actor-critic agent)",
            ));
        }
        if want != ck.kind {
            return Err(Error::format(
                "kind",
                format!(
                    "expected a {} checkpoint, found {}",
                    want.name(),
                    ck.kind.name()
                ),
            ));
        }
        let load = |doc: &ParamDocument, field: &str| {
            ParameterSet::from_document(doc).map_err(|e| match e {
                Error::Format { field: f, message } => {
                    Error::format(format!("{field}.{f}"), message)
                }
                other => other,
            })
        };
        let actor_p = load(&ck.actor, "actor")?;
        let critic_p = load(&ck.critic, "critic")?;
        let actor = Mlp::attach(&actor_p, "actor", actor_spec(ck.config.hidden))
            .map_err(|e| Error::format("actor", e.to_string()))?;
        let critic = Mlp::attach(&critic_p, "critic", critic_spec(ck.config.hidden))
            .map_err(|e| Error::format("critic", e.to_string()))?;
        let actor_t = load(&ck.actor_target, "actor_target")?;
        let critic_t = load(&ck.critic_target, "critic_target")?;
        actor_t
            .check_compatible(&actor_p)
            .map_err(|e| Error::format("actor_target", e.to_string()))?;
        critic_t
            .check_compatible(&critic_p)
            .map_err(|e| Error::format("critic_target", e.to_string()))?;
        let (event, event_p, event_t) = match ck.kind {
            AgentKind::Iac => {
                if ck.event_critic.is_some() || ck.event_critic_target.is_some() {
                    return Err(Error::format(
                        "event_critic",
                        "unexpected block in an independent agent",
                    ));
                }
                (None, None, None)
            }
            AgentKind::Caac => {
                let doc = ck.event_critic.as_ref().expect("checked above");
                let p = load(doc, "event_critic")?;
                let ec = EventCritic::attach(&p, ck.config.event)
                    .map_err(|e| Error::format("event_critic", e.to_string()))?;
                let tdoc = ck
                    .event_critic_target
                    .as_ref()
                    .ok_or_else(|| Error::format("event_critic_target", "missing block"))?;
                let t = load(tdoc, "event_critic_target")?;
                t.check_compatible(&p)
                    .map_err(|e| Error::format("event_critic_target", e.to_string()))?;
                (Some(ec), Some(p), Some(t))
            }
        };
        let nets = Nets {
            actor: actor_p,
            critic: critic_p,
            event: event_p,
        };
        let targets = Nets {
            actor: actor_t,
            critic: critic_t,
            event: event_t,
        };
        ck.actor_optimizer
            .check_compatible(&nets.actor)
            .map_err(|e| Error::format("actor_optimizer", e.to_string()))?;
        ck.critic_optimizer
            .check_compatible(&nets.critic)
            .map_err(|e| Error::format("critic_optimizer", e.to_string()))?;
        let mut agent =
            Self::assemble(ck.config.clone(), actor, critic, event, nets, targets, seed);
        agent.actor_opt = ck.actor_optimizer.clone();
        agent.critic_opt = ck.critic_optimizer.clone();
        match (&agent.nets.event, &ck.event_optimizer) {
            (Some(p), Some(opt)) => {
                opt.check_compatible(p)
                    .map_err(|e| Error::format("event_optimizer", e.to_string()))?;
                agent.event_opt = Some(opt.clone());
            }
            (None, None) => {}
            _ => {
                return Err(Error::format(
                    "event_optimizer",
                    "does not match the event critic",
                ))
            }
        }
        agent.updates = ck.updates;
        Ok(agent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, expect: Option<AgentKind>, seed: u64) -> Result<Self> {
        let ck: CaacCheckpoint =
            serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        Self::from_checkpoint(&ck, expect, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path, expect: Option<AgentKind>, seed: u64) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, expect, seed)
    }

    /// Parameters of every network and target, for exact comparisons.
    pub fn all_params(&self) -> Vec<&ParameterSet> {
        let mut v = vec![
            &self.nets.actor,
            &self.nets.critic,
            &self.targets.actor,
            &self.targets.critic,
        ];
        v.extend(self.nets.event.iter());
        v.extend(self.targets.event.iter());
        v
    }
}

/// Serialized agent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaacCheckpoint {
    pub format_version: u32,
    pub kind: AgentKind,
    pub config: CaacConfig,
    pub updates: u64,
    pub actor: ParamDocument,
    pub critic: ParamDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_critic: Option<ParamDocument>,
    pub actor_target: ParamDocument,
    pub critic_target: ParamDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_critic_target: Option<ParamDocument>,
    pub actor_optimizer: Adam,
    pub critic_optimizer: Adam,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_optimizer: Option<Adam>,
}

/// Mean `Q(s, mu(s))` over the batch and its gradient for the actor, with
/// the critic held fixed.
/// Gradient of `mean(Q(s, mu(s)) + U(s, mu(s), window))` over the logged
/// windows of `batch`.
pub fn inductive_actor_gradient(
    actor: &Mlp,
    actor_p: &ParameterSet,
    critic: &Mlp,
    critic_p: &ParameterSet,
    event: &EventCritic,
    event_p: &ParameterSet,
    batch: &[&Transition],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let ab = actor_p.bind(&mut tape);
    let cb = critic_p.bind_frozen(&mut tape);
    let eb = event_p.bind_frozen(&mut tape);
    let obs = tape.constant(obs_matrix(batch.iter().map(|t| &t.obs)));
    let a = actor.forward(&mut tape, &ab, obs)?;
    let x = tape.concat_cols(&[obs, a])?;
    let q = critic.forward(&mut tape, &cb, x)?;
    let mut events = EventBatch::default();
    for t in batch {
        events.push(&ego_features(&t.obs, t.action), &t.window);
    }
    let pad = tape.constant(Tensor::zeros(batch.len(), NODE_DIM - Observation::DIM - 1));
    let ego = tape.concat_cols(&[obs, a, pad])?;
    let u = event.forward_with_ego(&mut tape, &eb, &events, ego)?.u;
    let g = tape.add(q, u)?;
    let objective = tape.mean(g);
    let value = tape.value(objective).item();
    let grads = tape.backward(objective)?;
    Ok((value, ab.gradients(&grads, actor_p)))
}

pub fn actor_gradient(
    actor: &Mlp,
    actor_p: &ParameterSet,
    critic: &Mlp,
    critic_p: &ParameterSet,
    batch: &[&Transition],
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let ab = actor_p.bind(&mut tape);
    let cb = critic_p.bind_frozen(&mut tape);
    let obs = tape.constant(obs_matrix(batch.iter().map(|t| &t.obs)));
    let a = actor.forward(&mut tape, &ab, obs)?;
    let x = tape.concat_cols(&[obs, a])?;
    let q = critic.forward(&mut tape, &cb, x)?;
    let objective = tape.mean(q);
    let value = tape.value(objective).item();
    let grads = tape.backward(objective)?;
    Ok((value, ab.gradients(&grads, actor_p)))
}

/// Critic loss of `agent` on `batch` (TD error plus empty-side penalty).
pub fn critic_loss(agent: &CaacAgent, batch: &[&Transition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let targets = agent.td_targets(batch)?;
    let mut tape = Tape::new();
    let (loss, _, _) = agent.critic_graph(&mut tape, batch, &targets)?;
    Ok(tape.value(loss).item())
}
