//! The simulator seen as an asynchronous decision stream.
//!
//! Each arrival of a bus at a non-final stop is a decision point. The
//! decision's reward and next observation are only known once the same bus
//! reaches its next stop, by which time other buses may have decided too.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EventLog, EventNode};
use crate::sim::{Advance, ArrivalEvent, Passenger, RouteConfig, SimState};

/// Normalized local state of one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Onboard passengers over capacity.
    pub occupancy: f64,
    /// Forward headway over the mean dispatch headway.
    pub forward_headway: f64,
    /// Backward headway over the mean dispatch headway.
    pub backward_headway: f64,
}

impl Observation {
    pub const DIM: usize = 3;

    pub fn to_array(self) -> [f64; 3] {
        [self.occupancy, self.forward_headway, self.backward_headway]
    }
}

/// Holding strength `a` in `[0, 1]`; the bus holds `a * max_hold` seconds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HoldingAction(f64);

impl HoldingAction {
    pub const NONE: HoldingAction = HoldingAction(0.0);

    pub fn new(a: f64) -> Result<Self> {
        if a.is_finite() && (0.0..=1.0).contains(&a) {
            Ok(HoldingAction(a))
        } else {
            Err(Error::Argument(format!(
                "holding action {a} outside [0, 1]"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn action_to_hold_seconds(a: HoldingAction, max_hold: f64) -> f64 {
    a.0 * max_hold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Weight of the holding penalty against headway regularity.
    pub w: f64,
    pub gamma: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w: 0.2,
            gamma: 0.99,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::Config(format!(
                "reward weight w={} outside [0, 1]",
                self.w
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "discount gamma={} outside [0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Squared coefficient of variation with population variance; zero for
/// fewer than two samples or a non-positive mean.
pub fn fleet_cv2(headways: &[f64]) -> f64 {
    if headways.len() < 2 {
        return 0.0;
    }
    let n = headways.len() as f64;
    let mean = headways.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let var = headways.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    var / (mean * mean)
}

/// `-(1 - w) * CV^2 - w * a`.
pub fn reward_from_headways(headways: &[f64], a: HoldingAction, w: f64) -> f64 {
    -(1.0 - w) * fleet_cv2(headways) - w * a.0
}

pub fn observe(sim: &SimState, event: &ArrivalEvent) -> Result<Observation> {
    observe_bus(sim, event.bus_index)
}

/// Observation of any active bus at the current clock.
pub fn observe_bus(sim: &SimState, bus: usize) -> Result<Observation> {
    let config = sim.config();
    let (fh, bh) = sim.headways(bus)?;
    let occupancy = sim.buses()[bus].occupancy;
    Ok(Observation {
        occupancy: f64::from(occupancy) / f64::from(config.capacity),
        forward_headway: fh / config.dispatch_mean,
        backward_headway: bh / config.dispatch_mean,
    })
}

/// Reward for `decision` from the fleet's current forward headways.
pub fn compute_reward(sim: &SimState, decision: &PendingDecision, w: f64) -> Result<f64> {
    let a = decision
        .action
        .ok_or_else(|| Error::State("decision has no action yet".into()))?;
    Ok(reward_from_headways(&sim.fleet_forward_headways(), a, w))
}

/// One decision and, once known, its feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingDecision {
    pub bus_index: usize,
    pub stop: usize,
    pub time: f64,
    pub observation: Observation,
    pub action: Option<HoldingAction>,
    pub hold: Option<f64>,
    pub reward: Option<f64>,
    pub next_observation: Option<Observation>,
    /// Arrival time at the next stop, closing this decision's window.
    pub feedback_time: Option<f64>,
    /// Fleet forward headways the reward was computed from.
    pub feedback_headways: Vec<f64>,
    /// The next stop was the final one: no further decision follows.
    pub terminal: bool,
    /// Index of the same bus's following decision.
    pub next_decision: Option<usize>,
}

impl PendingDecision {
    pub fn is_finalized(&self) -> bool {
        self.reward.is_some()
    }
}

/// One row of the exported decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub bus: usize,
    pub stop: usize,
    pub t: f64,
    pub obs_occ: f64,
    pub obs_fh: f64,
    pub obs_bh: f64,
    pub action: f64,
    pub hold_s: f64,
    pub reward: Option<f64>,
    pub terminal: bool,
}

impl DecisionRecord {
    pub fn from_decision(d: &PendingDecision) -> Option<Self> {
        let a = d.action?;
        Some(DecisionRecord {
            bus: d.bus_index,
            stop: d.stop,
            t: d.time,
            obs_occ: d.observation.occupancy,
            obs_fh: d.observation.forward_headway,
            obs_bh: d.observation.backward_headway,
            action: a.value(),
            hold_s: d.hold.unwrap_or(0.0),
            reward: d.reward,
            terminal: d.terminal,
        })
    }
}

/// What a policy sees at a decision point.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub decision: usize,
    pub bus_index: usize,
    pub stop: usize,
    pub time: f64,
    pub observation: Observation,
    pub sim: &'a SimState,
}

/// Maps a decision context to a raw holding action.
pub trait Policy {
    fn act(&mut self, ctx: &DecisionContext<'_>) -> f64;
}

impl<F: FnMut(&DecisionContext<'_>) -> f64> Policy for F {
    fn act(&mut self, ctx: &DecisionContext<'_>) -> f64 {
        self(ctx)
    }
}

/// Everything needed to score a finished episode.
#[derive(Debug, Clone)]
pub struct EpisodeSummary {
    pub config: RouteConfig,
    pub seed: u64,
    pub end_time: f64,
    pub dispatch_times: Vec<f64>,
    pub event_log: Vec<ArrivalEvent>,
    pub passengers: Vec<Passenger>,
    pub decisions: Vec<PendingDecision>,
    pub graph: EventLog,
}

impl EpisodeSummary {
    /// Decision trace in decision order.
    pub fn trace(&self) -> Vec<DecisionRecord> {
        self.decisions
            .iter()
            .filter_map(DecisionRecord::from_decision)
            .collect()
    }
}

/// Drives a [`SimState`] one decision at a time.
#[derive(Debug, Clone)]
pub struct Episode {
    sim: SimState,
    reward: RewardConfig,
    decisions: Vec<PendingDecision>,
    awaiting_feedback: Vec<Option<usize>>,
    current: Option<(ArrivalEvent, usize)>,
    graph: EventLog,
}

impl Episode {
    pub fn new(sim: SimState, reward: RewardConfig) -> Result<Self> {
        reward.validate()?;
        if !sim.event_log().is_empty() {
            return Err(Error::State("episode needs a fresh simulation".into()));
        }
        let n = sim.buses().len();
        let graph = EventLog::new(sim.config().n_stops());
        Ok(Episode {
            sim,
            reward,
            decisions: Vec::new(),
            awaiting_feedback: vec![None; n],
            current: None,
            graph,
        })
    }

    pub fn sim(&self) -> &SimState {
        &self.sim
    }

    pub fn reward_config(&self) -> RewardConfig {
        self.reward
    }

    pub fn decisions(&self) -> &[PendingDecision] {
        &self.decisions
    }

    pub fn decision(&self, i: usize) -> &PendingDecision {
        &self.decisions[i]
    }

    pub fn graph(&self) -> &EventLog {
        &self.graph
    }

    pub fn context(&self) -> Option<DecisionContext<'_>> {
        let (_, idx) = self.current.as_ref()?;
        let d = &self.decisions[*idx];
        Some(DecisionContext {
            decision: *idx,
            bus_index: d.bus_index,
            stop: d.stop,
            time: d.time,
            observation: d.observation,
            sim: &self.sim,
        })
    }

    /// Advances to the next decision point, settling feedback for buses
    /// that arrive on the way. Returns the new decision's index, or `None`
    /// once the episode is over.
    pub fn next_decision(&mut self) -> Result<Option<usize>> {
        if self.current.is_some() {
            return Err(Error::Protocol("current decision has no action yet".into()));
        }
        loop {
            let event = match self.sim.advance_to_next_arrival()? {
                Advance::EpisodeDone => return Ok(None),
                Advance::Arrival(ev) => ev,
            };
            let n_stops = self.sim.config().n_stops();
            let final_stop = event.is_final_stop(n_stops);
            let next_idx = self.decisions.len();
            if let Some(prev) = self.awaiting_feedback[event.bus_index].take() {
                let headways = self.sim.fleet_forward_headways();
                let next_obs = if final_stop {
                    None
                } else {
                    Some(observe(&self.sim, &event)?)
                };
                let d = &mut self.decisions[prev];
                let a = d.action.expect("acted before feedback");
                d.reward = Some(reward_from_headways(&headways, a, self.reward.w));
                d.feedback_headways = headways;
                d.next_observation = next_obs;
                d.feedback_time = Some(event.time);
                d.terminal = final_stop;
                if !final_stop {
                    d.next_decision = Some(next_idx);
                }
            }
            if final_stop {
                continue;
            }
            let observation = observe(&self.sim, &event)?;
            let idx = self.decisions.len();
            self.decisions.push(PendingDecision {
                bus_index: event.bus_index,
                stop: event.stop,
                time: event.time,
                observation,
                action: None,
                hold: None,
                reward: None,
                next_observation: None,
                feedback_time: None,
                feedback_headways: Vec::new(),
                terminal: false,
                next_decision: None,
            });
            self.current = Some((event, idx));
            return Ok(Some(idx));
        }
    }

    /// Applies a raw action in `[0, 1]` to the current decision.
    pub fn act(&mut self, a: f64) -> Result<()> {
        let action = HoldingAction::new(a)?;
        let Some((event, idx)) = self.current.take() else {
            return Err(Error::Protocol("no decision is awaiting an action".into()));
        };
        let hold = action_to_hold_seconds(action, self.sim.config().max_hold);
        if let Err(e) = self.sim.apply_holding(&event, hold) {
            self.current = Some((event, idx));
            return Err(e);
        }
        let d = &mut self.decisions[idx];
        d.action = Some(action);
        d.hold = Some(hold);
        self.awaiting_feedback[d.bus_index] = Some(idx);
        self.graph.record_event(EventNode {
            bus_index: d.bus_index,
            time: d.time,
            stop: d.stop,
            observation: d.observation,
            action,
        })?;
        Ok(())
    }

    pub fn finish(self) -> EpisodeSummary {
        EpisodeSummary {
            config: self.sim.config().clone(),
            seed: self.sim.seed(),
            end_time: self.sim.clock(),
            dispatch_times: self.sim.buses().iter().map(|b| b.dispatch_time).collect(),
            event_log: self.sim.event_log().to_vec(),
            passengers: self.sim.passengers().to_vec(),
            decisions: self.decisions,
            graph: self.graph,
        }
    }
}

/// Runs a whole episode under `policy`.
pub fn rollout_episode<P: Policy + ?Sized>(
    sim: SimState,
    reward: RewardConfig,
    policy: &mut P,
) -> Result<EpisodeSummary> {
    let mut episode = Episode::new(sim, reward)?;
    while episode.next_decision()?.is_some() {
        let ctx = episode.context().expect("decision pending");
        let a = policy.act(&ctx);
        episode.act(a)?;
    }
    Ok(episode.finish())
}
