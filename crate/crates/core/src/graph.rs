//! Event graph: bus arrivals as vertices, linked to the ego bus's decision
//! when they fall inside its decision window.

use serde::{Deserialize, Serialize};

use crate::env::{HoldingAction, Observation};
use crate::error::{Error, Result};

/// A decision taken by bus `bus_index` at `stop` and `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventNode {
    pub bus_index: usize,
    pub time: f64,
    pub stop: usize,
    pub observation: Observation,
    pub action: HoldingAction,
}

/// Relation between the ego event and a neighboring event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeature {
    /// Stops between the two events over the number of stops.
    pub stop_separation: f64,
    /// `|j - i|` for buses `i` and `j`.
    pub vehicle_gap: f64,
}

pub fn edge_features(ego: &EventNode, other: &EventNode, n_stops: usize) -> EdgeFeature {
    EdgeFeature {
        stop_separation: ego.stop.abs_diff(other.stop) as f64 / n_stops as f64,
        vehicle_gap: ego.bus_index.abs_diff(other.bus_index) as f64,
    }
}

/// Other buses' events inside the ego window `(start, end]`, split by
/// position in the fleet: upstream buses follow the ego bus (`j > i`),
/// downstream buses lead it (`j < i`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeighborSets {
    pub upstream: Vec<(EventNode, EdgeFeature)>,
    pub downstream: Vec<(EventNode, EdgeFeature)>,
    pub window: (f64, f64),
}

impl NeighborSets {
    pub fn is_empty(&self) -> bool {
        self.upstream.is_empty() && self.downstream.is_empty()
    }

    pub fn len(&self) -> usize {
        self.upstream.len() + self.downstream.len()
    }
}

/// Chronological, append-only record of decision events.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventLog {
    nodes: Vec<EventNode>,
    n_stops: usize,
}

impl EventLog {
    pub fn new(n_stops: usize) -> Self {
        EventLog {
            nodes: Vec::new(),
            n_stops,
        }
    }

    pub fn n_stops(&self) -> usize {
        self.n_stops
    }

    pub fn nodes(&self) -> &[EventNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends `node`; events sharing a timestamp are kept ordered by bus index.
    pub fn record_event(&mut self, node: EventNode) -> Result<()> {
        if !node.time.is_finite() {
            return Err(Error::Protocol("event time must be finite".into()));
        }
        if let Some(last) = self.nodes.last() {
            if node.time < last.time {
                return Err(Error::Protocol(format!(
                    "event at {} recorded after event at {}",
                    node.time, last.time
                )));
            }
        }
        let pos = self
            .nodes
            .partition_point(|n| (n.time, n.bus_index) <= (node.time, node.bus_index));
        self.nodes.insert(pos, node);
        Ok(())
    }

    /// Neighbor events for `ego` over the window `(ego.time, end]`.
    pub fn neighbor_sets(&self, ego: &EventNode, end: f64) -> NeighborSets {
        let start = ego.time;
        let lo = self.nodes.partition_point(|n| n.time <= start);
        let hi = self.nodes.partition_point(|n| n.time <= end);
        let mut sets = NeighborSets {
            window: (start, end),
            ..Default::default()
        };
        if lo >= hi {
            return sets;
        }
        for other in &self.nodes[lo..hi] {
            if other.bus_index == ego.bus_index {
                continue;
            }
            let edge = edge_features(ego, other, self.n_stops);
            if other.bus_index > ego.bus_index {
                sets.upstream.push((*other, edge));
            } else {
                sets.downstream.push((*other, edge));
            }
        }
        sets
    }
}

/// Brute-force reference for [`EventLog::neighbor_sets`]: scans every node.
pub fn oracle_neighbor_sets(log: &EventLog, ego: &EventNode, end: f64) -> NeighborSets {
    let mut sets = NeighborSets {
        window: (ego.time, end),
        ..Default::default()
    };
    for other in log.nodes() {
        let inside = ego.time < other.time && other.time <= end;
        if !inside || other.bus_index == ego.bus_index {
            continue;
        }
        let gap = other.bus_index as i64 - ego.bus_index as i64;
        let edge = EdgeFeature {
            stop_separation: (other.stop as f64 - ego.stop as f64).abs() / log.n_stops() as f64,
            vehicle_gap: gap.abs() as f64,
        };
        if gap > 0 {
            sets.upstream.push((*other, edge));
        } else {
            sets.downstream.push((*other, edge));
        }
    }
    sets
}
