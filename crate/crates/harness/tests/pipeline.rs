mod common;

use std::fs;

use common::{tiny_config, tiny_route, write_route};
use holdlab_core::io::{read_event_log, read_passengers, read_trace};
use holdlab_core::metrics::compute_metrics;
use holdlab_harness::commands::{
    cmd_eval, cmd_plot, cmd_train, cmd_transfer, read_curve, CHECKPOINT_FILE, CURVE_FILE,
};
use holdlab_harness::experiment::{load_checkpoint, load_checkpoint_as, Learner, PolicyKind};

#[test]
fn one_episode_gives_one_curve_row_and_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), PolicyKind::Caac);
    cfg.episodes = 1;
    let dirs = cmd_train(&cfg).unwrap();
    assert_eq!(read_curve(&dirs[0].join(CURVE_FILE)).unwrap().len(), 1);
    let l = load_checkpoint(&dirs[0].join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(l.kind(), PolicyKind::Caac);
}

#[test]
fn training_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for kind in [PolicyKind::Caac, PolicyKind::Maddpg] {
        let da = cmd_train(&tiny_config(a.path(), kind)).unwrap();
        let db = cmd_train(&tiny_config(b.path(), kind)).unwrap();
        for f in [CURVE_FILE, CHECKPOINT_FILE] {
            assert_eq!(
                fs::read(da[0].join(f)).unwrap(),
                fs::read(db[0].join(f)).unwrap(),
                "{kind} {f}"
            );
        }
    }
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), PolicyKind::Iac);
    cfg.episodes = 2;
    let d = cmd_train(&cfg).unwrap();
    let first = read_curve(&d[0].join(CURVE_FILE)).unwrap();
    cfg.episodes = 4;
    cmd_train(&cfg).unwrap();
    let resumed = read_curve(&d[0].join(CURVE_FILE)).unwrap();
    assert_eq!(resumed.len(), 4);
    assert_eq!(resumed[..2], first[..]);
    // Episode draws do not depend on whether the run was resumed. Sigma
    // follows the schedule of the run that produced each row.
    let fresh_dir = tempfile::tempdir().unwrap();
    let mut fresh = tiny_config(fresh_dir.path(), PolicyKind::Iac);
    fresh.episodes = 4;
    let f = read_curve(&cmd_train(&fresh).unwrap()[0].join(CURVE_FILE)).unwrap();
    for (x, y) in f.iter().zip(&resumed) {
        assert_eq!((x.sim_seed, x.demand_scale), (y.sim_seed, y.demand_scale));
    }
}

#[test]
fn eval_deltas_match_raw_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), PolicyKind::Caac);
    let ck = cmd_train(&cfg).unwrap()[0].join(CHECKPOINT_FILE);
    cfg.out = dir.path().join("eval");
    let policies = [PolicyKind::Fh, PolicyKind::Caac];
    let (path, rows) = cmd_eval(&cfg, &policies, std::slice::from_ref(&ck), true).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    let again = fs::read(&path).unwrap();
    let (_, rows2) = cmd_eval(&cfg, &policies, &[ck], true).unwrap();
    assert_eq!(rows, rows2);
    assert_eq!(again, fs::read(&path).unwrap());

    let route = tiny_route("tiny", 6, 3);
    let logs = cfg.out.join("logs").join("tiny");
    let metrics = |policy: &str, seed: u64| {
        let open = |kind: &str| {
            fs::File::open(logs.join(format!("{policy}-seed{seed}-{kind}.csv"))).unwrap()
        };
        compute_metrics(
            &route.config,
            &read_event_log(open("events")).unwrap(),
            &read_passengers(open("passengers")).unwrap(),
            &read_trace(open("trace")).unwrap(),
        )
        .unwrap()
    };
    for r in &rows {
        let nc = metrics("nc", r.seed);
        let m = metrics(&r.policy, r.seed);
        assert!((r.awt - m.awt).abs() < 1e-9);
        assert!((r.d_awt - (m.awt - nc.awt)).abs() < 1e-9);
        assert!((r.d_aod - (m.aod - nc.aod)).abs() < 1e-9);
        assert!((r.d_att - (m.att - nc.att)).abs() < 1e-9);
        assert!((r.d_aht - (m.aht - nc.aht)).abs() < 1e-9);
        if r.policy == "nc" {
            assert_eq!((r.d_awt, r.d_aod, r.d_att, r.d_aht), (0.0, 0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn transfer_runs_on_other_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), PolicyKind::Caac);
    let ck = cmd_train(&cfg).unwrap()[0].join(CHECKPOINT_FILE);
    cfg.policy = PolicyKind::Maddpg;
    let mk = cmd_train(&cfg).unwrap()[0].join(CHECKPOINT_FILE);
    let train_route = cfg.routes[0].clone();
    let bigger = write_route(dir.path(), &tiny_route("bigger", 9, 5));
    let smaller = write_route(dir.path(), &tiny_route("smaller", 4, 2));
    cfg.routes = vec![
        train_route,
        bigger.display().to_string(),
        smaller.display().to_string(),
    ];
    cfg.out = dir.path().join("transfer");
    let policies = [PolicyKind::Nc, PolicyKind::Caac, PolicyKind::Maddpg];
    let (_, rows) = cmd_transfer(&cfg, &policies, &[ck.clone(), mk.clone()], false).unwrap();
    assert_eq!(rows.len(), 3 * 3 * 2);
    let note = |route: &str| {
        rows.iter()
            .find(|r| r.route == route && r.policy == "maddpg")
            .unwrap()
            .note
            .clone()
    };
    assert_eq!(note("tiny"), "");
    assert!(note("bigger").contains("lowest-index"));
    assert!(note("smaller").contains("padded"));
    assert!(rows
        .iter()
        .filter(|r| r.policy == "caac")
        .all(|r| r.note.is_empty()));

    // Transfer to the training route alone is the evaluation.
    cfg.routes.truncate(1);
    let (_, t) = cmd_transfer(&cfg, &policies, &[ck.clone(), mk.clone()], false).unwrap();
    let (_, e) = cmd_eval(&cfg, &policies, &[ck, mk], false).unwrap();
    assert_eq!(t, e);
}

#[test]
fn checkpoint_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), PolicyKind::Iac);
    let ck = cmd_train(&cfg).unwrap()[0].join(CHECKPOINT_FILE);
    let err = load_checkpoint_as(&ck, PolicyKind::Caac)
        .unwrap_err()
        .to_string();
    assert!(err.contains("event_critic"), "{err}");

    let text = fs::read_to_string(&ck).unwrap();
    let truncated = dir.path().join("truncated.json");
    fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(load_checkpoint(&truncated).is_err());

    let bumped = dir.path().join("bumped.json");
    fs::write(
        &bumped,
        text.replacen("\"format_version\":1", "\"format_version\":99", 1),
    )
    .unwrap();
    let err = load_checkpoint(&bumped).unwrap_err().to_string();
    assert!(err.contains("format_version"), "{err}");

    // Double round trip is exact.
    let l = load_checkpoint(&ck).unwrap();
    let p2 = dir.path().join("again.json");
    l.save(&p2).unwrap();
    assert_eq!(fs::read_to_string(&p2).unwrap(), text);
    assert!(matches!(l, Learner::Caac(_)));
}

#[test]
fn plots_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), PolicyKind::Fh);
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    cmd_plot(&cfg, PolicyKind::Fh, None, 3, &a).unwrap();
    cmd_plot(&cfg, PolicyKind::Fh, None, 3, &b).unwrap();
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let svg = String::from_utf8(bytes).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let mut cfg = tiny_config(dir.path(), PolicyKind::Caac);
    cfg.out = blocker.join("sub");
    let err = cmd_train(&cfg).unwrap_err();
    assert!(
        matches!(err, holdlab_harness::error::HarnessError::Io { .. }),
        "{err}"
    );
}
