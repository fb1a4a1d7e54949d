#![allow(dead_code)]

use std::path::{Path, PathBuf};

use holdlab_core::agent::CaacConfig;
use holdlab_core::sim::{RouteConfig, RouteSpec};
use holdlab_harness::experiment::{ExperimentConfig, PolicyKind};
use holdlab_harness::presets::synthetic_demand;

/// Six stops, three buses, short horizon.
pub fn tiny_route(name: &str, stops: usize, buses: usize) -> RouteSpec {
    RouteSpec {
        name: name.to_string(),
        config: RouteConfig {
            stop_positions: (0..stops).map(|k| k as f64 * 600.0).collect(),
            n_services: buses,
            dispatch_mean: 300.0,
            dispatch_std: 60.0,
            nominal_speed: 30.0,
            capacity: 60,
            t_alight: 1.8,
            t_board: 3.0,
            max_hold: 180.0,
            horizon: 3600.0,
        },
        demand: synthetic_demand(stops, 40.0),
    }
}

pub fn write_route(dir: &Path, route: &RouteSpec) -> PathBuf {
    let path = dir.join(format!("{}.toml", route.name));
    std::fs::write(&path, route.to_toml_string()).unwrap();
    path
}

pub fn tiny_config(dir: &Path, policy: PolicyKind) -> ExperimentConfig {
    let route = write_route(dir, &tiny_route("tiny", 6, 3));
    ExperimentConfig {
        routes: vec![route.display().to_string()],
        policy,
        episodes: 2,
        seeds: vec![1],
        eval_seeds: vec![0, 1],
        out: dir.join("out"),
        checkpoint_every: 1,
        agent: CaacConfig {
            batch_size: 8,
            hidden: 8,
            ..CaacConfig::default()
        },
        ..ExperimentConfig::default()
    }
}
