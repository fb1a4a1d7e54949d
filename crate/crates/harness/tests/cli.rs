mod common;

use std::process::Command;

use common::{tiny_route, write_route};

fn holdlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_holdlab"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn train_eval_transfer_plot() {
    let dir = tempfile::tempdir().unwrap();
    let route = write_route(dir.path(), &tiny_route("tiny", 6, 3));
    let other = write_route(dir.path(), &tiny_route("other", 8, 4));
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "checkpoint_every = 1\n[agent]\ngamma = 0.99\nactor_lr = 0.0001\ncritic_lr = 0.001\nevent_lr = 0.001\ntau = 0.005\nbatch_size = 8\nbuffer_capacity = 1000\nsigma_start = 0.2\nsigma_end = 0.02\nbeta = 0.1\nw = 0.2\nmax_hold = 180.0\nhidden = 8\n[agent.event]\nattention_dim = 8\nhead_hidden = 8\n").unwrap();
    let out = dir.path().join("out");
    let (r, c, o) = (
        route.to_str().unwrap(),
        cfg.to_str().unwrap(),
        out.to_str().unwrap(),
    );
    let t = holdlab(&[
        "train",
        "--config",
        c,
        "--route",
        r,
        "--policy",
        "caac",
        "--episodes",
        "1",
        "--seeds",
        "4",
        "--out",
        o,
    ]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let ck = out.join("caac-seed4").join("checkpoint.json");
    assert!(ck.exists());
    let k = ck.to_str().unwrap();
    let e = holdlab(&[
        "eval",
        "--config",
        c,
        "--route",
        r,
        "--policy",
        "fh,caac",
        "--checkpoint",
        k,
        "--seeds",
        "0,1",
        "--out",
        o,
    ]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 3);
    let both = format!("{r},{}", other.display());
    let x = holdlab(&[
        "transfer",
        "--config",
        c,
        "--route",
        &both,
        "--policy",
        "caac",
        "--checkpoint",
        k,
        "--seeds",
        "0,1,2",
        "--out",
        o,
    ]);
    assert!(x.status.success(), "{}", String::from_utf8_lossy(&x.stderr));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 3 * 2);
    let svg = dir.path().join("nc.svg");
    let p = holdlab(&[
        "plot",
        "--route",
        r,
        "--policy",
        "nc",
        "--seeds",
        "2",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert!(p.status.success(), "{}", String::from_utf8_lossy(&p.stderr));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn errors_exit_nonzero() {
    let bad_policy = holdlab(&["eval", "--policy", "qmix"]);
    assert!(!bad_policy.status.success());
    assert!(String::from_utf8_lossy(&bad_policy.stderr).contains("unknown policy"));
    let missing = holdlab(&["eval", "--policy", "caac", "--seeds", "0"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("checkpoint"));
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"format_version\": 1, \"kind\": \"caac\"").unwrap();
    let load = holdlab(&[
        "eval",
        "--policy",
        "caac",
        "--checkpoint",
        broken.to_str().unwrap(),
        "--seeds",
        "0",
    ]);
    assert!(!load.status.success());
    let no_route = holdlab(&["eval", "--route", "R9s", "--policy", "nc"]);
    assert!(!no_route.status.success());
    assert!(String::from_utf8_lossy(&no_route.stderr).contains("R9s"));
}
