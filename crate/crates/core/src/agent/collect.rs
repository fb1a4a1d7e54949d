//! Turns the episode's decision stream into replayable transitions.
//!
//! A decision's transition needs the neighbor events of its own window and
//! of the window that follows, so it is emitted only once the clock has
//! moved past the end of that second window. Decisions whose feedback never
//! arrived before the horizon are dropped; those whose follow-up decision
//! was cut off are emitted as terminal.

use super::event_critic::WindowFeatures;
use super::Transition;
use crate::env::{Episode, PendingDecision};
use crate::graph::{EventLog, EventNode};

/// A decision whose transition can now be built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadyDecision {
    pub decision: usize,
    /// The same bus's next decision, absent for terminal transitions.
    pub next: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct TransitionCollector {
    pending: Vec<usize>,
    seen: usize,
}

pub(crate) fn event_node(d: &PendingDecision) -> EventNode {
    EventNode {
        bus_index: d.bus_index,
        time: d.time,
        stop: d.stop,
        observation: d.observation,
        action: d.action.expect("acted decision"),
    }
}

/// Neighbor features of decision `d`'s window, which must have feedback.
pub(crate) fn window_of(graph: &EventLog, d: &PendingDecision) -> WindowFeatures {
    let end = d.feedback_time.expect("finalized decision");
    WindowFeatures::from_sets(&graph.neighbor_sets(&event_node(d), end))
}

impl TransitionCollector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_pending(&self) -> usize {
        self.pending.len()
    }

    /// Decisions that became ready; with `done` every remaining one is
    /// settled.
    pub fn drain_ready(
        &mut self,
        decisions: &[PendingDecision],
        clock: f64,
        done: bool,
    ) -> Vec<ReadyDecision> {
        self.pending.extend(self.seen..decisions.len());
        self.seen = decisions.len();
        let mut ready = Vec::new();
        self.pending.retain(|&i| {
            let d = &decisions[i];
            let Some(end) = d.feedback_time else {
                return !done;
            };
            if d.terminal {
                if done || clock > end {
                    ready.push(ReadyDecision {
                        decision: i,
                        next: None,
                    });
                    return false;
                }
                return true;
            }
            let n = d
                .next_decision
                .expect("non-terminal feedback names the next decision");
            match decisions[n].feedback_time {
                Some(end2) if done || clock > end2 => {
                    ready.push(ReadyDecision {
                        decision: i,
                        next: Some(n),
                    });
                    false
                }
                Some(_) => true,
                None if done => {
                    ready.push(ReadyDecision {
                        decision: i,
                        next: None,
                    });
                    false
                }
                None => true,
            }
        });
        ready
    }

    /// Ready transitions for the event-critic agent.
    pub fn drain_transitions(&mut self, episode: &Episode, done: bool) -> Vec<Transition> {
        let ready = self.drain_ready(episode.decisions(), episode.sim().clock(), done);
        ready
            .into_iter()
            .map(|r| build_transition(episode.decisions(), episode.graph(), r))
            .collect()
    }
}

pub(crate) fn build_transition(
    decisions: &[PendingDecision],
    graph: &EventLog,
    r: ReadyDecision,
) -> Transition {
    let d = &decisions[r.decision];
    let (next_obs, next_window) = match r.next {
        Some(n) => {
            let nd = &decisions[n];
            (Some(nd.observation), Some(window_of(graph, nd)))
        }
        None => (None, None),
    };
    Transition {
        obs: d.observation,
        action: d.action.expect("acted decision").value(),
        reward: d.reward.expect("finalized decision"),
        window: window_of(graph, d),
        terminal: r.next.is_none(),
        next_obs,
        next_window,
    }
}
