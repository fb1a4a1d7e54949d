//! Centralized critic over a fixed number of agent slots, decentralized
//! actor on local observations. Agents without a current decision
//! contribute zero actions.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::TrainingStats;
use crate::agent::{
    obs_matrix, select_action, soft_update, CaacConfig, ReplayBuffer, TransitionCollector,
    OUTPUT_INIT_BOUND,
};
use crate::env::{
    observe_bus, DecisionContext, Episode, EpisodeSummary, HoldingAction, Observation, RewardConfig,
};
use crate::error::{Error, Result};
use crate::neural::{Activation, Adam, LayerSpec, Mlp, ParamDocument, ParameterSet, Tape, Tensor};
use crate::sim::SimState;

pub const MADDPG_CHECKPOINT_VERSION: u32 = 1;

/// Fleet-wide observations and actions over `n` slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFeature {
    /// `n * 3` values; zero for empty slots.
    pub obs: Vec<f64>,
    /// `n` values; only the deciding slot may be nonzero.
    pub actions: Vec<f64>,
    pub slot: usize,
}

/// Slot of each active bus. With a fleet no larger than `n` the slot is the
/// bus index; otherwise the `n` lowest-index active buses are kept, the
/// deciding bus replacing the last one if it would be left out.
pub fn joint_slots(
    fleet: usize,
    active: &[usize],
    deciding: usize,
    n: usize,
) -> Vec<(usize, usize)> {
    if fleet <= n {
        return active.iter().map(|&b| (b, b)).collect();
    }
    let mut kept: Vec<usize> = active.iter().copied().take(n).collect();
    if !kept.contains(&deciding) {
        if let Some(last) = kept.last_mut() {
            *last = deciding;
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .enumerate()
        .map(|(slot, b)| (b, slot))
        .collect()
}

/// Joint feature for `deciding` holding with strength `action`.
pub fn maddpg_joint(
    sim: &SimState,
    deciding: usize,
    action: f64,
    n: usize,
) -> Result<JointFeature> {
    let active: Vec<usize> = sim.active_buses().map(|b| b.bus_index).collect();
    if !active.contains(&deciding) {
        return Err(Error::State(format!(
            "deciding bus {deciding} is not active"
        )));
    }
    let slots = joint_slots(sim.buses().len(), &active, deciding, n);
    let mut obs = vec![0.0; n * Observation::DIM];
    let mut slot = 0;
    for (bus, s) in slots {
        let o = observe_bus(sim, bus)?;
        obs[s * 3..s * 3 + 3].copy_from_slice(&o.to_array());
        if bus == deciding {
            slot = s;
        }
    }
    let mut actions = vec![0.0; n];
    actions[slot] = action;
    Ok(JointFeature { obs, actions, slot })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaddpgTransition {
    pub obs: Observation,
    pub joint: JointFeature,
    pub action: f64,
    pub reward: f64,
    pub terminal: bool,
    pub next_obs: Option<Observation>,
    pub next_joint: Option<JointFeature>,
}

#[derive(Debug, Clone)]
pub struct MaddpgAgent {
    config: CaacConfig,
    n_slots: usize,
    actor: Mlp,
    critic: Mlp,
    actor_p: ParameterSet,
    critic_p: ParameterSet,
    actor_t: ParameterSet,
    critic_t: ParameterSet,
    actor_opt: Adam,
    critic_opt: Adam,
    buffer: ReplayBuffer<MaddpgTransition>,
    rng: ChaCha8Rng,
    updates: u64,
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn actor_spec(h: usize) -> LayerSpec {
    LayerSpec::new(
        vec![Observation::DIM, h, h, 1],
        Activation::Tanh,
        Activation::Sigmoid,
    )
}

fn critic_spec(h: usize, n: usize) -> LayerSpec {
    LayerSpec::new(
        vec![n * (Observation::DIM + 1), h, h, 1],
        Activation::Tanh,
        Activation::Identity,
    )
}

fn joint_row(j: &JointFeature, action: f64) -> impl Iterator<Item = f64> + '_ {
    let n = j.actions.len();
    j.obs
        .iter()
        .copied()
        .chain((0..n).map(move |k| if k == j.slot { action } else { 0.0 }))
}

impl MaddpgAgent {
    pub fn new(config: CaacConfig, n_slots: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_slots == 0 {
            return Err(Error::Config("joint critic needs at least one slot".into()));
        }
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
            critic_spec(config.hidden, n_slots),
            Some(OUTPUT_INIT_BOUND),
            &mut init,
        )?;
        Ok(MaddpgAgent {
            actor_opt: Adam::new(&actor_p, config.actor_lr),
            critic_opt: Adam::new(&critic_p, config.critic_lr),
            actor_t: actor_p.clone(),
            critic_t: critic_p.clone(),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            rng: stream(seed, 2),
            config,
            n_slots,
            actor,
            critic,
            actor_p,
            critic_p,
            updates: 0,
        })
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn config(&self) -> &CaacConfig {
        &self.config
    }

    pub fn actor_params(&self) -> &ParameterSet {
        &self.actor_p
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = stream(seed, 2);
    }

    pub fn policy_action(&self, obs: &Observation) -> Result<HoldingAction> {
        let a = self
            .actor
            .predict(&self.actor_p, &obs_matrix([obs]))?
            .item();
        HoldingAction::new(a.clamp(0.0, 1.0))
    }

    pub fn policy(&self) -> impl FnMut(&DecisionContext<'_>) -> f64 + '_ {
        move |ctx| {
            self.policy_action(&ctx.observation)
                .map(|a| a.value())
                .unwrap_or(0.0)
        }
    }

    fn td_targets(&self, batch: &[&MaddpgTransition]) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].terminal).collect();
        if live.is_empty() {
            return Ok(y);
        }
        let mut next_obs = Vec::with_capacity(live.len());
        for &i in &live {
            match (&batch[i].next_obs, &batch[i].next_joint) {
                (Some(o), Some(_)) => next_obs.push(*o),
                _ => {
                    return Err(Error::Data(
                        "non-terminal transition without next joint state".into(),
                    ))
                }
            }
        }
        let mu = self
            .actor
            .predict(&self.actor_t, &obs_matrix(next_obs.iter()))?;
        let width = self.n_slots * (Observation::DIM + 1);
        let mut input = Vec::with_capacity(live.len() * width);
        for (k, &i) in live.iter().enumerate() {
            input.extend(joint_row(
                batch[i].next_joint.as_ref().expect("checked"),
                mu.data()[k],
            ));
        }
        let q = self
            .critic
            .predict(&self.critic_t, &Tensor::from_vec(live.len(), width, input)?)?;
        for (k, &i) in live.iter().enumerate() {
            y[i] += self.config.gamma * q.data()[k];
        }
        Ok(y)
    }

    pub fn update_on(&mut self, batch: &[&MaddpgTransition]) -> Result<(f64, f64)> {
        let n = batch.len();
        let width = self.n_slots * (Observation::DIM + 1);
        let y = self.td_targets(batch)?;
        let mut tape = Tape::new();
        let cb = self.critic_p.bind(&mut tape);
        let mut input = Vec::with_capacity(n * width);
        for t in batch {
            input.extend(joint_row(&t.joint, t.action));
        }
        let x = tape.constant(Tensor::from_vec(n, width, input)?);
        let q = self.critic.forward(&mut tape, &cb, x)?;
        let yv = tape.constant(Tensor::column(&y));
        let td = tape.sub(q, yv)?;
        let sq = tape.square(td);
        let loss = tape.mean(sq);
        let loss_v = tape.value(loss).item();
        let g = cb.gradients(&tape.backward(loss)?, &self.critic_p);
        self.critic_opt.step(&mut self.critic_p, &g)?;

        // Actor: the deciding slot's action comes from the actor.
        let mut tape = Tape::new();
        let ab = self.actor_p.bind(&mut tape);
        let cb = self.critic_p.bind_frozen(&mut tape);
        let obs = tape.constant(obs_matrix(batch.iter().map(|t| &t.obs)));
        let a = self.actor.forward(&mut tape, &ab, obs)?;
        let joint_obs: Vec<f64> = batch
            .iter()
            .flat_map(|t| t.joint.obs.iter().copied())
            .collect();
        let jo = tape.constant(Tensor::from_vec(n, self.n_slots * 3, joint_obs)?);
        let onehot: Vec<f64> = batch
            .iter()
            .flat_map(|t| (0..self.n_slots).map(move |k| if k == t.joint.slot { 1.0 } else { 0.0 }))
            .collect();
        let oh = tape.constant(Tensor::from_vec(n, self.n_slots, onehot)?);
        let acts = tape.scale_rows(oh, a)?;
        let x = tape.concat_cols(&[jo, acts])?;
        let q = self.critic.forward(&mut tape, &cb, x)?;
        let objective = tape.mean(q);
        let obj_v = tape.value(objective).item();
        let g: Vec<Tensor> = ab
            .gradients(&tape.backward(objective)?, &self.actor_p)
            .into_iter()
            .map(|t| t.map(|x| -x))
            .collect();
        self.actor_opt.step(&mut self.actor_p, &g)?;
        soft_update(&mut self.actor_t, &self.actor_p, self.config.tau)?;
        soft_update(&mut self.critic_t, &self.critic_p, self.config.tau)?;
        self.updates += 1;
        Ok((loss_v, obj_v))
    }

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
        let mut collector = TransitionCollector::new();
        let mut joints: Vec<JointFeature> = Vec::new();
        let mut stats = TrainingStats::default();
        loop {
            let next = episode.next_decision()?;
            let done = next.is_none();
            let ready = collector.drain_ready(episode.decisions(), episode.sim().clock(), done);
            for r in ready {
                let d = episode.decision(r.decision);
                let action = d.action.expect("acted").value();
                let (next_obs, next_joint) = match r.next {
                    Some(n) => (
                        Some(episode.decision(n).observation),
                        Some(joints[n].clone()),
                    ),
                    None => (None, None),
                };
                let mut joint = joints[r.decision].clone();
                joint.actions[joint.slot] = action;
                self.buffer.push(MaddpgTransition {
                    obs: d.observation,
                    joint,
                    action,
                    reward: d.reward.expect("finalized"),
                    terminal: r.next.is_none(),
                    next_obs,
                    next_joint,
                });
            }
            let Some(idx) = next else { break };
            let d = episode.decision(idx);
            let (bus, obs) = (d.bus_index, d.observation);
            joints.push(maddpg_joint(episode.sim(), bus, 0.0, self.n_slots)?);
            let a = select_action(&self.actor, &self.actor_p, &obs, sigma, &mut self.rng)?;
            episode.act(a.value())?;
            for _ in 0..self.config.updates_per_step {
                if self.buffer.len() < self.config.batch_size {
                    break;
                }
                let batch: Vec<MaddpgTransition> = self
                    .buffer
                    .sample_batch(self.config.batch_size, &mut self.rng)?
                    .into_iter()
                    .cloned()
                    .collect();
                let refs: Vec<&MaddpgTransition> = batch.iter().collect();
                let (l, o) = self.update_on(&refs)?;
                stats.updates += 1;
                stats.mean_critic_loss += l;
                stats.mean_actor_objective += o;
            }
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

    pub fn to_checkpoint(&self) -> MaddpgCheckpoint {
        MaddpgCheckpoint {
            format_version: MADDPG_CHECKPOINT_VERSION,
            kind: "maddpg".into(),
            config: self.config.clone(),
            n_slots: self.n_slots,
            updates: self.updates,
            actor: self.actor_p.to_document(),
            critic: self.critic_p.to_document(),
            actor_target: self.actor_t.to_document(),
            critic_target: self.critic_t.to_document(),
            actor_optimizer: self.actor_opt.clone(),
            critic_optimizer: self.critic_opt.clone(),
        }
    }

    pub fn from_checkpoint(ck: &MaddpgCheckpoint, seed: u64) -> Result<Self> {
        if ck.format_version != MADDPG_CHECKPOINT_VERSION {
            return Err(Error::format(
                "format_version",
                format!("unsupported version {}", ck.format_version),
            ));
        }
        if ck.kind != "maddpg" {
            return Err(Error::format(
                "kind",
                format!("expected maddpg, found {}", ck.kind),
            ));
        }
        let mut agent = Self::new(ck.config.clone(), ck.n_slots, seed)
            .map_err(|e| Error::format("config", e.to_string()))?;
        let load =
            |doc: &ParamDocument, field: &str, like: &ParameterSet| -> Result<ParameterSet> {
                let p = ParameterSet::from_document(doc).map_err(|e| match e {
                    Error::Format { field: f, message } => {
                        Error::format(format!("{field}.{f}"), message)
                    }
                    other => other,
                })?;
                p.check_compatible(like)
                    .map_err(|e| Error::format(field, e.to_string()))?;
                Ok(p)
            };
        agent.actor_p = load(&ck.actor, "actor", &agent.actor_p)?;
        agent.critic_p = load(&ck.critic, "critic", &agent.critic_p)?;
        agent.actor_t = load(&ck.actor_target, "actor_target", &agent.actor_p)?;
        agent.critic_t = load(&ck.critic_target, "critic_target", &agent.critic_p)?;
        ck.actor_optimizer
            .check_compatible(&agent.actor_p)
            .map_err(|e| Error::format("actor_optimizer", e.to_string()))?;
        ck.critic_optimizer
            .check_compatible(&agent.critic_p)
            .map_err(|e| Error::format("critic_optimizer", e.to_string()))?;
        agent.actor_opt = ck.actor_optimizer.clone();
        agent.critic_opt = ck.critic_optimizer.clone();
        agent.updates = ck.updates;
        Ok(agent)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, seed: u64) -> Result<Self> {
        let ck: MaddpgCheckpoint =
            serde_json::from_str(text).map_err(|e| Error::format("checkpoint", e.to_string()))?;
        Self::from_checkpoint(&ck, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn all_params(&self) -> Vec<&ParameterSet> {
        vec![&self.actor_p, &self.critic_p, &self.actor_t, &self.critic_t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaddpgCheckpoint {
    pub format_version: u32,
    pub kind: String,
    pub config: CaacConfig,
    pub n_slots: usize,
    pub updates: u64,
    pub actor: ParamDocument,
    pub critic: ParamDocument,
    pub actor_target: ParamDocument,
    pub critic_target: ParamDocument,
    pub actor_optimizer: Adam,
    pub critic_optimizer: Adam,
}
