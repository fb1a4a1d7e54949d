//! Reference controllers: no control, forward-headway holding, and a
//! centralized-critic learner. Independent actor-critic is the agent of
//! [`crate::agent`] without its event critic.

mod maddpg;

use serde::{Deserialize, Serialize};

pub use maddpg::{
    joint_slots, maddpg_joint, JointFeature, MaddpgAgent, MaddpgCheckpoint, MaddpgTransition,
};

use crate::agent::{AgentKind, CaacAgent, CaacConfig};
use crate::env::{DecisionContext, HoldingAction, Observation};
use crate::error::{Error, Result};

/// Forward-headway holding rule `d = max(0, d_bar + g (H0 - h))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhParams {
    /// Desired headway, seconds.
    pub h0: f64,
    /// Equilibrium hold, seconds.
    pub d_bar: f64,
    pub g: f64,
}

impl FhParams {
    pub fn for_headway(h0: f64) -> Self {
        FhParams {
            h0,
            d_bar: 30.0,
            g: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.d_bar >= 0.0 && self.g > 0.0) {
            return Err(Error::Config(format!(
                "holding rule needs h0 > 0, d_bar >= 0, g > 0 (got {}, {}, {})",
                self.h0, self.d_bar, self.g
            )));
        }
        Ok(())
    }
}

/// Hold in seconds for forward headway `h_minus`, capped at `max_hold`.
pub fn fh_hold(h_minus: f64, p: &FhParams, max_hold: f64) -> f64 {
    (p.d_bar + p.g * (p.h0 - h_minus)).clamp(0.0, max_hold)
}

pub fn nc_policy(_obs: &Observation) -> HoldingAction {
    HoldingAction::NONE
}

/// Forward-headway holding as a policy over normalized observations.
pub fn fh_policy(
    p: FhParams,
    dispatch_mean: f64,
    max_hold: f64,
) -> impl FnMut(&DecisionContext<'_>) -> f64 {
    move |ctx| {
        fh_hold(
            ctx.observation.forward_headway * dispatch_mean,
            &p,
            max_hold,
        ) / max_hold
    }
}

/// The actor-critic agent with the event critic disabled.
pub fn iac_factory(config: CaacConfig, seed: u64) -> Result<CaacAgent> {
    CaacAgent::new(config, AgentKind::Iac, seed)
}
