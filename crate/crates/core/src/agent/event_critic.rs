//! Graph-attention critic over the events of other buses that fall inside
//! the ego bus's decision window.

use std::rc::Rc;

use rand::Rng;

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::graph::{EdgeFeature, EventNode, NeighborSets};
use crate::neural::{Activation, Bound, LayerSpec, Mlp, ParameterSet, Tape, Tensor, Var};

/// Width of a node feature vector: observation, action and two edge features.
pub const NODE_DIM: usize = 6;
/// Vehicle gaps beyond this are treated as this far apart.
pub const VEHICLE_GAP_CLIP: f64 = 10.0;
pub const ATTENTION_SLOPE: f64 = 0.2;

pub type NodeFeatures = [f64; NODE_DIM];

/// `(s, a, 0, 0)` for the ego event.
pub fn ego_features(obs: &Observation, action: f64) -> NodeFeatures {
    [
        obs.occupancy,
        obs.forward_headway,
        obs.backward_headway,
        action,
        0.0,
        0.0,
    ]
}

/// `(s, a, e1, min(e2, clip))` for a neighbor event.
pub fn neighbor_features(node: &EventNode, edge: &EdgeFeature) -> NodeFeatures {
    let o = node.observation;
    [
        o.occupancy,
        o.forward_headway,
        o.backward_headway,
        node.action.value(),
        edge.stop_separation,
        edge.vehicle_gap.min(VEHICLE_GAP_CLIP),
    ]
}

/// Features of `ego`, or of `neighbor` as seen from `ego` when given.
pub fn node_features(
    ego: &EventNode,
    neighbor: Option<(&EventNode, &EdgeFeature)>,
) -> NodeFeatures {
    match neighbor {
        None => ego_features(&ego.observation, ego.action.value()),
        Some((n, e)) => neighbor_features(n, e),
    }
}

/// Neighbor features of one window, split by side.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowFeatures {
    pub upstream: Vec<NodeFeatures>,
    pub downstream: Vec<NodeFeatures>,
}

impl WindowFeatures {
    pub fn from_sets(sets: &NeighborSets) -> Self {
        let f = |v: &[(EventNode, EdgeFeature)]| {
            v.iter().map(|(n, e)| neighbor_features(n, e)).collect()
        };
        WindowFeatures {
            upstream: f(&sets.upstream),
            downstream: f(&sets.downstream),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.upstream.is_empty() && self.downstream.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Up,
    Down,
}

impl Side {
    fn prefix(self) -> &'static str {
        match self {
            Side::Up => "up",
            Side::Down => "down",
        }
    }
}

/// Sizes of the event critic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventCriticShape {
    pub attention_dim: usize,
    pub head_hidden: usize,
}

impl Default for EventCriticShape {
    fn default() -> Self {
        EventCriticShape {
            attention_dim: 32,
            head_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    wa: usize,
    scorer: Mlp,
}

/// Parameter layout of the event critic: one attention block per side and a
/// shared feed-forward head on the summed side aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCritic {
    pub shape: EventCriticShape,
    up: Block,
    down: Block,
    head: Mlp,
}

/// One side of a batch: neighbor rows and the batch row each belongs to.
#[derive(Debug, Clone, Default)]
pub struct SideBatch {
    pub features: Vec<f64>,
    pub segment: Vec<usize>,
}

impl SideBatch {
    pub fn len(&self) -> usize {
        self.segment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segment.is_empty()
    }

    pub fn push(&mut self, row: usize, f: &NodeFeatures) {
        self.features.extend_from_slice(f);
        self.segment.push(row);
    }
}

/// Batched event-critic input.
#[derive(Debug, Clone, Default)]
pub struct EventBatch {
    pub ego: Vec<f64>,
    pub up: SideBatch,
    pub down: SideBatch,
    pub up_empty: Vec<bool>,
    pub down_empty: Vec<bool>,
}

impl EventBatch {
    pub fn rows(&self) -> usize {
        self.up_empty.len()
    }

    /// Adds one instance. Neighbors are put in a canonical order so that
    /// the output does not depend on how a side was listed, down to the bit.
    pub fn push(&mut self, ego: &NodeFeatures, window: &WindowFeatures) {
        let row = self.rows();
        self.ego.extend_from_slice(ego);
        for f in canonical(&window.upstream) {
            self.up.push(row, &f);
        }
        for f in canonical(&window.downstream) {
            self.down.push(row, &f);
        }
        self.up_empty.push(window.upstream.is_empty());
        self.down_empty.push(window.downstream.is_empty());
    }
}

fn canonical(side: &[NodeFeatures]) -> Vec<NodeFeatures> {
    let mut v = side.to_vec();
    v.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    v
}

/// Tape handles for a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EventOutput {
    /// `[B x 1]`, zero where both sides are empty.
    pub u: Var,
    pub m_up: Var,
    pub m_down: Var,
    pub alpha_up: Option<Var>,
    pub alpha_down: Option<Var>,
}

/// Result of evaluating a single instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventEvaluation {
    pub u: f64,
    pub m_up: Vec<f64>,
    pub m_down: Vec<f64>,
    pub up_empty: bool,
    pub down_empty: bool,
}

impl EventCritic {
    pub fn init<R: Rng + ?Sized>(
        params: &mut ParameterSet,
        shape: EventCriticShape,
        rng: &mut R,
    ) -> Result<Self> {
        let d = shape.attention_dim;
        let block = |params: &mut ParameterSet, side: Side, rng: &mut R| -> Result<Block> {
            let wa =
                params.add_uniform(format!("{}.wa", side.prefix()), NODE_DIM, d, NODE_DIM, rng)?;
            let scorer = Mlp::init(
                params,
                &format!("{}.f", side.prefix()),
                LayerSpec::new(vec![2 * d, 1], Activation::Identity, Activation::Identity),
                rng,
            )?;
            Ok(Block { wa, scorer })
        };
        let up = block(params, Side::Up, rng)?;
        let down = block(params, Side::Down, rng)?;
        let head = Mlp::init_with_output_bound(
            params,
            "head",
            Self::head_spec(shape),
            Some(super::OUTPUT_INIT_BOUND),
            rng,
        )?;
        Ok(EventCritic {
            shape,
            up,
            down,
            head,
        })
    }

    fn head_spec(shape: EventCriticShape) -> LayerSpec {
        LayerSpec::new(
            vec![shape.attention_dim, shape.head_hidden, 1],
            Activation::Tanh,
            Activation::Identity,
        )
    }

    /// Re-attaches to a parameter set laid out by [`EventCritic::init`].
    pub fn attach(params: &ParameterSet, shape: EventCriticShape) -> Result<Self> {
        let d = shape.attention_dim;
        let block = |side: Side| -> Result<Block> {
            let name = format!("{}.wa", side.prefix());
            let wa = params
                .index_of(&name)
                .ok_or_else(|| Error::format(&name, "missing parameter"))?;
            if params.tensor(wa).shape() != [NODE_DIM, d] {
                return Err(Error::format(name, "unexpected shape"));
            }
            let scorer = Mlp::attach(
                params,
                &format!("{}.f", side.prefix()),
                LayerSpec::new(vec![2 * d, 1], Activation::Identity, Activation::Identity),
            )?;
            Ok(Block { wa, scorer })
        };
        Ok(EventCritic {
            shape,
            up: block(Side::Up)?,
            down: block(Side::Down)?,
            head: Mlp::attach(params, "head", Self::head_spec(shape))?,
        })
    }

    fn block(&self, side: Side) -> &Block {
        match side {
            Side::Up => &self.up,
            Side::Down => &self.down,
        }
    }

    /// Aggregate `M = tanh(W h_ego) + sum_k tanh(alpha_k W h_k)` for one side.
    /// Returns `M` and the attention weights when the side has neighbors.
    fn side(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        side: Side,
        ego: Var,
        batch: &SideBatch,
        rows: usize,
    ) -> Result<(Var, Option<Var>)> {
        let block = self.block(side);
        let wa = bound.var(block.wa);
        let ego_w = tape.matmul(ego, wa)?;
        let ego_msg = tape.tanh(ego_w);
        if batch.is_empty() {
            return Ok((ego_msg, None));
        }
        let n = tape.constant(Tensor::from_vec(
            batch.len(),
            NODE_DIM,
            batch.features.clone(),
        )?);
        let seg: Rc<[usize]> = batch.segment.clone().into();
        let n_w = tape.matmul(n, wa)?;
        let ego_rep = tape.gather_rows(ego_w, seg.clone())?;
        let pair = tape.concat_cols(&[ego_rep, n_w])?;
        let score = block.scorer.forward(tape, bound, pair)?;
        let score = tape.leaky_relu(score, ATTENTION_SLOPE);
        let alpha = tape.segment_softmax(score, seg.clone())?;
        let msg = tape.scale_rows(n_w, alpha)?;
        let msg = tape.tanh(msg);
        let summed = tape.segment_sum(msg, seg, rows)?;
        Ok((tape.add(ego_msg, summed)?, Some(alpha)))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &EventBatch,
    ) -> Result<EventOutput> {
        let rows = batch.rows();
        if rows == 0 {
            return Err(Error::Argument("empty event batch".into()));
        }
        let ego = tape.constant(Tensor::from_vec(rows, NODE_DIM, batch.ego.clone())?);
        self.forward_with_ego(tape, bound, batch, ego)
    }

    /// As [`EventCritic::forward`] with the ego node features supplied as a
    /// recorded `[rows x NODE_DIM]` var, so gradients can reach the ego action.
    pub fn forward_with_ego(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &EventBatch,
        ego: Var,
    ) -> Result<EventOutput> {
        let rows = batch.rows();
        if tape.value(ego).shape() != [rows, NODE_DIM] {
            return Err(Error::Argument(
                "ego features do not match the event batch".into(),
            ));
        }
        let (m_up, alpha_up) = self.side(tape, bound, Side::Up, ego, &batch.up, rows)?;
        let (m_down, alpha_down) = self.side(tape, bound, Side::Down, ego, &batch.down, rows)?;
        let m = tape.add(m_up, m_down)?;
        let raw = self.head.forward(tape, bound, m)?;
        let mask: Vec<f64> = batch
            .up_empty
            .iter()
            .zip(&batch.down_empty)
            .map(|(&u, &d)| if u && d { 0.0 } else { 1.0 })
            .collect();
        let mask = tape.constant(Tensor::column(&mask));
        let u = tape.mul(raw, mask)?;
        Ok(EventOutput {
            u,
            m_up,
            m_down,
            alpha_up,
            alpha_down,
        })
    }

    /// `sum_b (1{up empty} |M_up|^2 + 1{down empty} |M_down|^2)` as a `[1 x 1]` var.
    pub fn empty_penalty(
        &self,
        tape: &mut Tape,
        out: &EventOutput,
        batch: &EventBatch,
    ) -> Result<Var> {
        let mut total = None;
        for (m, empty) in [(out.m_up, &batch.up_empty), (out.m_down, &batch.down_empty)] {
            let ind: Vec<f64> = empty.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
            let ind = tape.constant(Tensor::column(&ind));
            let sq = tape.square(m);
            let norms = tape.sum_rows(sq);
            let masked = tape.mul(norms, ind)?;
            let s = tape.sum(masked);
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s)?,
            });
        }
        Ok(total.expect("two sides"))
    }

    /// Evaluates one ego event against its window.
    pub fn evaluate(
        &self,
        params: &ParameterSet,
        ego: &NodeFeatures,
        window: &WindowFeatures,
    ) -> Result<EventEvaluation> {
        let mut batch = EventBatch::default();
        batch.push(ego, window);
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bound, &batch)?;
        Ok(EventEvaluation {
            u: tape.value(out.u).item(),
            m_up: tape.value(out.m_up).data().to_vec(),
            m_down: tape.value(out.m_down).data().to_vec(),
            up_empty: window.upstream.is_empty(),
            down_empty: window.downstream.is_empty(),
        })
    }

    /// Attention weights of one side's neighbors for one ego event.
    pub fn attention_weights(
        &self,
        params: &ParameterSet,
        side: Side,
        ego: &NodeFeatures,
        neighbors: &[NodeFeatures],
    ) -> Result<Vec<f64>> {
        if neighbors.is_empty() {
            return Err(Error::Protocol(
                "attention over an empty neighbor set".into(),
            ));
        }
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let mut batch = SideBatch::default();
        for f in neighbors {
            batch.push(0, f);
        }
        let e = tape.constant(Tensor::row(ego));
        let (_, alpha) = self.side(&mut tape, &bound, side, e, &batch, 1)?;
        Ok(tape.value(alpha.expect("nonempty side")).data().to_vec())
    }

    /// Side aggregate `M` for one ego event; empty `neighbors` gives the
    /// ego-only aggregate.
    pub fn aggregate_side(
        &self,
        params: &ParameterSet,
        side: Side,
        ego: &NodeFeatures,
        neighbors: &[NodeFeatures],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let mut batch = SideBatch::default();
        for f in neighbors {
            batch.push(0, f);
        }
        let e = tape.constant(Tensor::row(ego));
        let (m, _) = self.side(&mut tape, &bound, side, e, &batch, 1)?;
        Ok(tape.value(m).data().to_vec())
    }
}

#[cfg(test)]
mod tests;
