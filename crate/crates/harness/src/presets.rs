//! Synthetic route presets. Stop counts, fleet sizes, lengths and dispatch
//! statistics are fixed per route; stop spacing and demand are synthetic.

use holdlab_core::sim::{DemandProfile, RouteConfig, RouteSpec};

use crate::error::{HarnessError, Result};

/// Fixed characteristics of one route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteFacts {
    pub name: &'static str,
    pub services: usize,
    pub stops: usize,
    pub length_km: f64,
    pub dispatch_mean: f64,
    pub dispatch_std: f64,
}

pub const ROUTES: [RouteFacts; 4] = [
    RouteFacts {
        name: "R1s",
        services: 59,
        stops: 46,
        length_km: 17.4,
        dispatch_mean: 874.0,
        dispatch_std: 302.0,
    },
    RouteFacts {
        name: "R2s",
        services: 72,
        stops: 58,
        length_km: 23.7,
        dispatch_mean: 745.0,
        dispatch_std: 307.0,
    },
    RouteFacts {
        name: "R3s",
        services: 57,
        stops: 61,
        length_km: 23.2,
        dispatch_mean: 931.0,
        dispatch_std: 354.0,
    },
    RouteFacts {
        name: "R4s",
        services: 55,
        stops: 46,
        length_km: 22.5,
        dispatch_mean: 955.0,
        dispatch_std: 351.0,
    },
];

/// Stops on the desk-scale training route.
pub const DESK_STOPS: usize = 20;
/// Buses on the desk-scale training route.
pub const DESK_BUSES: usize = 8;
/// Desk-scale horizon, seconds.
pub const DESK_HORIZON: f64 = 4.0 * 3600.0;
/// Boarding passengers per hour at an average stop.
pub const PAX_PER_STOP_HOUR: f64 = 50.0;
/// Scale of the geometric trip-length distribution, in stops.
pub const TRIP_DECAY_STOPS: f64 = 4.0;

pub fn facts(name: &str) -> Result<RouteFacts> {
    ROUTES
        .iter()
        .copied()
        .find(|r| r.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| HarnessError::UnknownRoute(name.to_string()))
}

/// Full-size synthetic route: every service is dispatched and the horizon
/// leaves room for the last bus to finish.
pub fn full_route(f: &RouteFacts) -> RouteSpec {
    let length = f.length_km * 1000.0;
    let run = length / (30.0 / 3.6) / 0.6;
    let horizon = f.dispatch_mean * f.services as f64 + 3.0 * f.dispatch_std + 2.0 * run;
    build(
        f.name,
        f.stops,
        f.services,
        length,
        f.dispatch_mean,
        f.dispatch_std,
        horizon,
    )
}

/// Desk-scale route. The training route is scaled to 20 stops and 8 buses;
/// the others keep their stop and fleet ratios to it.
pub fn desk_route(f: &RouteFacts) -> RouteSpec {
    let base = ROUTES[0];
    let stops = (f.stops as f64 * DESK_STOPS as f64 / base.stops as f64).round() as usize;
    let buses = (f.services as f64 * DESK_BUSES as f64 / base.services as f64).round() as usize;
    let length = f.length_km * 1000.0 * DESK_STOPS as f64 / base.stops as f64;
    build(
        f.name,
        stops,
        buses,
        length,
        f.dispatch_mean,
        f.dispatch_std,
        DESK_HORIZON,
    )
}

/// Preset by name, at desk or full scale.
pub fn preset(name: &str, desk: bool) -> Result<RouteSpec> {
    let f = facts(name)?;
    Ok(if desk { desk_route(&f) } else { full_route(&f) })
}

/// Demand rises to a peak one third of the way along the route and tails
/// off; trip lengths decay geometrically with the number of stops ridden.
pub fn synthetic_demand(n_stops: usize, pax_per_stop_hour: f64) -> DemandProfile {
    let peak = (n_stops - 1) as f64 / 3.0;
    let shape: Vec<f64> = (0..n_stops)
        .map(|k| {
            let x = k as f64;
            if x <= peak {
                0.6 + 0.8 * x / peak.max(1.0)
            } else {
                1.4 - 0.9 * (x - peak) / ((n_stops - 1) as f64 - peak).max(1.0)
            }
        })
        .collect();
    let mean: f64 = shape[..n_stops - 1].iter().sum::<f64>() / (n_stops - 1) as f64;
    let mut rates: Vec<f64> = shape
        .iter()
        .map(|s| s / mean * pax_per_stop_hour / 3600.0)
        .collect();
    rates[n_stops - 1] = 0.0;
    let alight_weights = (0..n_stops)
        .map(|o| {
            let w: Vec<f64> = (0..n_stops)
                .map(|d| {
                    if d > o {
                        (-((d - o - 1) as f64) / TRIP_DECAY_STOPS).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = w.iter().sum();
            w.into_iter()
                .map(|x| if total > 0.0 { x / total } else { 0.0 })
                .collect()
        })
        .collect();
    DemandProfile {
        boarding_rate: rates,
        alight_weights,
    }
}

fn build(
    name: &str,
    stops: usize,
    services: usize,
    length: f64,
    dispatch_mean: f64,
    dispatch_std: f64,
    horizon: f64,
) -> RouteSpec {
    let spacing = length / (stops - 1) as f64;
    let config = RouteConfig {
        stop_positions: (0..stops).map(|k| k as f64 * spacing).collect(),
        n_services: services,
        dispatch_mean,
        dispatch_std,
        nominal_speed: 30.0,
        capacity: 120,
        t_alight: 1.8,
        t_board: 3.0,
        max_hold: 180.0,
        horizon,
    };
    RouteSpec {
        name: name.to_string(),
        demand: synthetic_demand(stops, PAX_PER_STOP_HOUR),
        config,
    }
}
