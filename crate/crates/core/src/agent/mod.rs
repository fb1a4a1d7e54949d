//! Actor-critic agents for asynchronous holding control.
//!
//! [`CaacAgent`] pairs a deterministic actor with an ego critic and,
//! optionally, an event critic that scores the actions other buses took
//! during the ego bus's decision window. Without the event critic it is
//! plain independent actor-critic.

mod caac;
mod collect;
pub mod event_critic;

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use caac::{
    actor_gradient, critic_loss, AgentKind, CaacAgent, CaacCheckpoint, TrainingStats, UpdateStats,
    CHECKPOINT_VERSION,
};
pub use collect::{ReadyDecision, TransitionCollector};
pub use event_critic::{
    ego_features, neighbor_features, node_features, EventBatch, EventCritic, EventCriticShape,
    EventEvaluation, NodeFeatures, Side, WindowFeatures, NODE_DIM, VEHICLE_GAP_CLIP,
};

use crate::env::{HoldingAction, Observation};
use crate::error::{Error, Result};
use crate::neural::{Mlp, ParameterSet, Tensor};

/// Missing fields take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaacConfig {
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub event_lr: f64,
    /// Target blend per update.
    pub tau: f64,
    pub batch_size: usize,
    /// Gradient steps taken after each decision.
    pub updates_per_step: usize,
    /// Whether the actor ascends the event critic's estimate as well as the
    /// ego critic's.
    pub actor_includes_event: bool,
    pub buffer_capacity: usize,
    /// Exploration noise decays linearly from `sigma_start` to `sigma_end`.
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Weight of the empty-neighborhood penalty.
    pub beta: f64,
    pub w: f64,
    pub max_hold: f64,
    pub hidden: usize,
    pub event: EventCriticShape,
}

/// Output layers start within this bound so initial actions sit near the
/// middle of the range and initial values near zero.
pub const OUTPUT_INIT_BOUND: f64 = 3e-3;

impl Default for CaacConfig {
    fn default() -> Self {
        CaacConfig {
            gamma: 0.95,
            actor_lr: 3e-5,
            critic_lr: 1e-3,
            event_lr: 1e-3,
            tau: 0.005,
            batch_size: 64,
            updates_per_step: 4,
            actor_includes_event: true,
            buffer_capacity: 100_000,
            sigma_start: 0.2,
            sigma_end: 0.02,
            beta: 0.1,
            w: 0.2,
            max_hold: 180.0,
            hidden: 64,
            event: EventCriticShape::default(),
        }
    }
}

impl CaacConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("gamma", (0.0..1.0).contains(&self.gamma)),
            ("actor_lr", self.actor_lr >= 0.0),
            ("critic_lr", self.critic_lr >= 0.0),
            ("event_lr", self.event_lr >= 0.0),
            ("tau", self.tau > 0.0 && self.tau <= 1.0),
            ("batch_size", self.batch_size > 0),
            ("updates_per_step", self.updates_per_step > 0),
            ("buffer_capacity", self.buffer_capacity >= self.batch_size),
            ("sigma_start", self.sigma_start >= 0.0),
            ("sigma_end", self.sigma_end >= 0.0),
            ("beta", self.beta >= 0.0),
            ("w", (0.0..=1.0).contains(&self.w)),
            ("max_hold", self.max_hold > 0.0),
            ("hidden", self.hidden > 0),
            ("event.attention_dim", self.event.attention_dim > 0),
            ("event.head_hidden", self.event.head_hidden > 0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(Error::Config(format!(
                "agent setting `{name}` out of range"
            ))),
            None => Ok(()),
        }
    }

    /// Noise level after `done` of `total` training episodes.
    pub fn sigma_at(&self, done: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.sigma_start;
        }
        let frac = (done as f64 / (total - 1) as f64).min(1.0);
        self.sigma_start + frac * (self.sigma_end - self.sigma_start)
    }
}

/// One finalized decision ready for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: f64,
    pub reward: f64,
    /// Other buses' events in `(t, t + delta]`.
    pub window: WindowFeatures,
    pub terminal: bool,
    pub next_obs: Option<Observation>,
    /// Events in the following decision's window.
    pub next_window: Option<WindowFeatures>,
}

/// Fixed-capacity FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// `batch_size` distinct items drawn uniformly.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&T>> {
        if batch_size > self.items.len() {
            return Err(Error::State(format!(
                "replay buffer holds {} items, batch needs {batch_size}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Ego critic value plus event critic value.
pub fn inductive_return(q: f64, u: f64) -> f64 {
    q + u
}

/// `target <- (1 - tau) target + tau source`.
pub fn soft_update(target: &mut ParameterSet, source: &ParameterSet, tau: f64) -> Result<()> {
    target
        .check_compatible(source)
        .map_err(|e| Error::Argument(e.to_string()))?;
    for i in 0..source.len() {
        let src = source.tensor(i).data();
        for (t, s) in target.values_mut(i).iter_mut().zip(src) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }
    Ok(())
}

pub fn obs_matrix<'a>(obs: impl IntoIterator<Item = &'a Observation>) -> Tensor {
    let data: Vec<f64> = obs.into_iter().flat_map(|o| o.to_array()).collect();
    let rows = data.len() / Observation::DIM;
    Tensor::from_vec(rows, Observation::DIM, data).expect("observation rows")
}

/// Deterministic actor output plus clipped Gaussian noise.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Mlp,
    params: &ParameterSet,
    obs: &Observation,
    sigma: f64,
    rng: &mut R,
) -> Result<HoldingAction> {
    let mut a = actor.predict(params, &obs_matrix([obs]))?.item();
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
        a += noise.sample(rng);
    }
    HoldingAction::new(a.clamp(0.0, 1.0))
}
