use super::*;
use crate::env::HoldingAction;
use crate::neural::gradient_check;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn critic(seed: u64) -> (EventCritic, ParameterSet) {
    let mut p = ParameterSet::new();
    let shape = EventCriticShape {
        attention_dim: 5,
        head_hidden: 7,
    };
    let ec = EventCritic::init(&mut p, shape, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (ec, p)
}

fn random_features(rng: &mut ChaCha8Rng) -> NodeFeatures {
    [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        f64::from(rng.random_range(1u32..10)),
    ]
}

fn obs(o: f64, f: f64, b: f64) -> Observation {
    Observation {
        occupancy: o,
        forward_headway: f,
        backward_headway: b,
    }
}

/// Straight-line re-implementation of one side's aggregation.
fn oracle_side(
    p: &ParameterSet,
    side: &str,
    ego: &NodeFeatures,
    nb: &[NodeFeatures],
) -> (Vec<f64>, Vec<f64>) {
    let wa = p.get(&format!("{side}.wa")).unwrap();
    let fw = p.get(&format!("{side}.f.w0")).unwrap();
    let fb = p.get(&format!("{side}.f.b0")).unwrap().item();
    let d = wa.cols();
    let proj = |h: &NodeFeatures| -> Vec<f64> {
        (0..d)
            .map(|c| (0..NODE_DIM).map(|r| h[r] * wa.get(r, c)).sum())
            .collect()
    };
    let e = proj(ego);
    let mut m: Vec<f64> = e.iter().map(|x| x.tanh()).collect();
    if nb.is_empty() {
        return (m, vec![]);
    }
    let projs: Vec<Vec<f64>> = nb.iter().map(proj).collect();
    let scores: Vec<f64> = projs
        .iter()
        .map(|pk| {
            let s: f64 = (0..d)
                .map(|c| e[c] * fw.get(c, 0) + pk[c] * fw.get(d + c, 0))
                .sum::<f64>()
                + fb;
            if s > 0.0 {
                s
            } else {
                0.2 * s
            }
        })
        .collect();
    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
    let alpha: Vec<f64> = scores.iter().map(|s| (s - mx).exp() / z).collect();
    for (k, pk) in projs.iter().enumerate() {
        for c in 0..d {
            m[c] += (alpha[k] * pk[c]).tanh();
        }
    }
    (m, alpha)
}

fn oracle_u(p: &ParameterSet, ego: &NodeFeatures, w: &WindowFeatures) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let (mu, _) = oracle_side(p, "up", ego, &w.upstream);
    let (md, _) = oracle_side(p, "down", ego, &w.downstream);
    let m: Vec<f64> = mu.iter().zip(&md).map(|(a, b)| a + b).collect();
    let w0 = p.get("head.w0").unwrap();
    let b0 = p.get("head.b0").unwrap();
    let w1 = p.get("head.w1").unwrap();
    let b1 = p.get("head.b1").unwrap();
    let hidden: Vec<f64> = (0..w0.cols())
        .map(|c| ((0..m.len()).map(|r| m[r] * w0.get(r, c)).sum::<f64>() + b0.get(0, c)).tanh())
        .collect();
    (0..hidden.len())
        .map(|r| hidden[r] * w1.get(r, 0))
        .sum::<f64>()
        + b1.item()
}

#[test]
fn feature_layout() {
    assert_eq!(
        ego_features(&obs(0.5, 1.0, 1.0), 0.2),
        [0.5, 1.0, 1.0, 0.2, 0.0, 0.0]
    );
    let ego = EventNode {
        bus_index: 3,
        time: 0.0,
        stop: 4,
        observation: obs(0.5, 1.0, 1.0),
        action: HoldingAction::new(0.2).unwrap(),
    };
    let other = EventNode {
        bus_index: 4,
        ..ego
    };
    let e = crate::graph::edge_features(&ego, &other, 20);
    let f = node_features(&ego, Some((&other, &e)));
    assert_eq!(&f[4..], &[0.0, 1.0]);
    assert_eq!(
        node_features(&ego, None),
        ego_features(&ego.observation, 0.2)
    );
    let far = EventNode {
        bus_index: 40,
        ..ego
    };
    let e = crate::graph::edge_features(&ego, &far, 20);
    assert_eq!(neighbor_features(&far, &e)[5], VEHICLE_GAP_CLIP);
}

#[test]
fn attention_special_cases() {
    let (ec, p) = critic(1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ego = random_features(&mut rng);
    let h = random_features(&mut rng);
    assert_eq!(
        ec.attention_weights(&p, Side::Up, &ego, &[h]).unwrap(),
        vec![1.0]
    );
    let two = ec.attention_weights(&p, Side::Down, &ego, &[h, h]).unwrap();
    assert_eq!(two, vec![0.5, 0.5]);
    assert!(matches!(
        ec.attention_weights(&p, Side::Up, &ego, &[]),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn attention_and_aggregate_match_oracle() {
    let (ec, p) = critic(2);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for n in 1..6 {
        let ego = random_features(&mut rng);
        let nb: Vec<NodeFeatures> = (0..n).map(|_| random_features(&mut rng)).collect();
        for (side, name) in [(Side::Up, "up"), (Side::Down, "down")] {
            let (m, alpha) = oracle_side(&p, name, &ego, &nb);
            let got = ec.attention_weights(&p, side, &ego, &nb).unwrap();
            for (a, b) in got.iter().zip(&alpha) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let agg = ec.aggregate_side(&p, side, &ego, &nb).unwrap();
            for (a, b) in agg.iter().zip(&m) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn aggregate_of_empty_side_and_self_copy() {
    let (ec, mut p) = critic(3);
    let ego = [0.3, 0.9, 1.1, 0.4, 0.0, 0.0];
    let agg = ec.aggregate_side(&p, Side::Up, &ego, &[ego]).unwrap();
    let alone = ec.aggregate_side(&p, Side::Up, &ego, &[]).unwrap();
    // One neighbor identical to the ego gets weight 1, doubling the ego term.
    for (a, b) in agg.iter().zip(&alone) {
        assert!((a - 2.0 * b).abs() < 1e-15);
    }
    let i = p.index_of("up.wa").unwrap();
    p.values_mut(i).fill(0.0);
    assert!(ec
        .aggregate_side(&p, Side::Up, &ego, &[])
        .unwrap()
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn forward_matches_oracle_and_masks_empty() {
    let (ec, p) = critic(4);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..20 {
        let ego = random_features(&mut rng);
        let w = WindowFeatures {
            upstream: (0..k % 4).map(|_| random_features(&mut rng)).collect(),
            downstream: (0..k % 3).map(|_| random_features(&mut rng)).collect(),
        };
        let got = ec.evaluate(&p, &ego, &w).unwrap();
        let want = oracle_u(&p, &ego, &w);
        assert!((got.u - want).abs() < 1e-12, "{} vs {want}", got.u);
        if w.is_empty() {
            assert_eq!(got.u, 0.0);
            assert!(got.up_empty && got.down_empty);
            assert!(got.m_up.iter().any(|&x| x != 0.0));
        }
    }
}

#[test]
fn forward_is_permutation_invariant() {
    let (ec, p) = critic(5);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ego = random_features(&mut rng);
    let mut w = WindowFeatures {
        upstream: (0..5).map(|_| random_features(&mut rng)).collect(),
        downstream: (0..4).map(|_| random_features(&mut rng)).collect(),
    };
    let base = ec.evaluate(&p, &ego, &w).unwrap();
    w.upstream.reverse();
    w.downstream.rotate_left(1);
    assert_eq!(ec.evaluate(&p, &ego, &w).unwrap(), base);
}

#[test]
fn batched_rows_are_independent() {
    let (ec, p) = critic(6);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut batch = EventBatch::default();
    let mut singles = Vec::new();
    for k in 0..6 {
        let ego = random_features(&mut rng);
        let w = WindowFeatures {
            upstream: (0..(k % 3)).map(|_| random_features(&mut rng)).collect(),
            downstream: (0..(k % 2)).map(|_| random_features(&mut rng)).collect(),
        };
        batch.push(&ego, &w);
        singles.push(ec.evaluate(&p, &ego, &w).unwrap().u);
    }
    let mut tape = Tape::new();
    let b = p.bind_frozen(&mut tape);
    let out = ec.forward(&mut tape, &b, &batch).unwrap();
    for (a, s) in tape.value(out.u).data().iter().zip(&singles) {
        assert!((a - s).abs() < 1e-12);
    }
}

#[test]
fn event_critic_passes_gradient_check() {
    let (ec, p) = critic(7);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut batch = EventBatch::default();
    let ego = random_features(&mut rng);
    // Three neighbors split across sides, one row with an empty side, one with none.
    batch.push(
        &ego,
        &WindowFeatures {
            upstream: vec![random_features(&mut rng), random_features(&mut rng)],
            downstream: vec![random_features(&mut rng)],
        },
    );
    batch.push(
        &random_features(&mut rng),
        &WindowFeatures {
            upstream: vec![random_features(&mut rng)],
            downstream: vec![],
        },
    );
    batch.push(&random_features(&mut rng), &WindowFeatures::default());
    let report = gradient_check(
        |tape, b| {
            let out = ec.forward(tape, b, &batch)?;
            let target = tape.constant(Tensor::column(&[0.3, -0.2, 0.1]));
            let d = tape.sub(out.u, target)?;
            let sq = tape.square(d);
            let loss = tape.mean(sq);
            let pen = ec.empty_penalty(tape, &out, &batch)?;
            let pen = tape.scale(pen, 0.1);
            tape.add(loss, pen)
        },
        &p,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.n_checked, p.n_values());
}

#[test]
fn attach_rejects_missing_blocks() {
    let (_, p) = critic(8);
    let shape = EventCriticShape {
        attention_dim: 5,
        head_hidden: 7,
    };
    assert!(EventCritic::attach(&p, shape).is_ok());
    let err = EventCritic::attach(&ParameterSet::new(), shape).unwrap_err();
    assert!(
        matches!(err, Error::Format { ref field, .. } if field == "up.wa"),
        "{err}"
    );
}
