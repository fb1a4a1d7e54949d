//! Service indicators computed from episode logs.
//!
//! Waiting time only counts passengers who arrive while a stop is in
//! service, that is after the first bus has left it and no later than the
//! last departure. Passengers left behind inside that window are charged
//! their wait up to the horizon.

use serde::{Deserialize, Serialize};

use crate::env::DecisionRecord;
use crate::error::{Error, Result};
use crate::sim::{ArrivalEvent, Passenger, RouteConfig};

/// Population variance over squared mean.
pub fn cv2(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::UndefinedStatistic(format!(
            "coefficient of variation needs two samples, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean.is_nan() || mean <= 0.0 {
        return Err(Error::UndefinedStatistic(format!(
            "coefficient of variation of values with mean {mean}"
        )));
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(var / (mean * mean))
}

/// Population variance over mean; zero for an all-zero sample.
pub fn dispersion(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n / mean
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Average holding time per decision, seconds.
    pub aht: f64,
    /// Average waiting time, seconds.
    pub awt: f64,
    /// Average in-vehicle journey time, seconds.
    pub ajt: f64,
    /// Average terminal-to-terminal travel time per bus, seconds.
    pub att: f64,
    /// Average occupancy dispersion (variance over mean).
    pub aod: f64,
    /// Headway CV^2 of bus arrivals at each stop; `None` with fewer than two headways.
    pub cv2_by_stop: Vec<Option<f64>>,
    /// Arrival headways at each stop, seconds.
    pub headway_samples: Vec<Vec<f64>>,
    pub n_waiting_counted: usize,
}

impl EpisodeMetrics {
    /// Mean headway CV^2 over the last third of the stops.
    pub fn downstream_cv2(&self) -> Option<f64> {
        let n = self.cv2_by_stop.len();
        let from = n - n / 3;
        let vals: Vec<f64> = self.cv2_by_stop[from..].iter().flatten().copied().collect();
        (!vals.is_empty()).then(|| mean(vals))
    }

    /// CV^2 of the realized dispatch gaps.
    pub fn dispatch_cv2(&self) -> Option<f64> {
        self.cv2_by_stop.first().copied().flatten()
    }
}

/// Per-stop event index: events sorted by arrival time.
fn events_by_stop(n_stops: usize, events: &[ArrivalEvent]) -> Result<Vec<Vec<&ArrivalEvent>>> {
    let mut by_stop: Vec<Vec<&ArrivalEvent>> = vec![Vec::new(); n_stops];
    for e in events {
        by_stop
            .get_mut(e.stop)
            .ok_or_else(|| {
                Error::Data(format!(
                    "event at stop {} of a {n_stops}-stop route",
                    e.stop
                ))
            })?
            .push(e);
    }
    for v in &mut by_stop {
        v.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.bus_index.cmp(&b.bus_index))
        });
    }
    Ok(by_stop)
}

/// Open service window `(first departure, last departure]` per stop.
fn service_windows(by_stop: &[Vec<&ArrivalEvent>]) -> Vec<Option<(f64, f64)>> {
    by_stop
        .iter()
        .map(|evs| {
            let deps: Vec<f64> = evs.iter().filter_map(|e| e.departure_time).collect();
            let lo = deps.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = deps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (!deps.is_empty()).then_some((lo, hi))
        })
        .collect()
}

/// Wait of one passenger if it counts toward the waiting-time average.
fn counted_wait(p: &Passenger, window: Option<(f64, f64)>, horizon: f64) -> Option<f64> {
    let (lo, hi) = window?;
    if !(p.arrive_time > lo && p.arrive_time <= hi) {
        return None;
    }
    Some(match p.board_time {
        Some(b) => b - p.arrive_time,
        None => (horizon - p.arrive_time).max(0.0),
    })
}

fn check_consistency(
    config: &RouteConfig,
    by_stop: &[Vec<&ArrivalEvent>],
    passengers: &[Passenger],
) -> Result<()> {
    for (i, p) in passengers.iter().enumerate() {
        if p.origin >= p.destination || p.destination >= config.n_stops() {
            return Err(Error::Data(format!(
                "passenger {i} travels {} -> {}",
                p.origin, p.destination
            )));
        }
        if let Some(b) = p.board_time {
            let served = by_stop[p.origin]
                .iter()
                .any(|e| e.time <= b && e.departure_time.is_none_or(|d| b <= d));
            if !served || b < p.arrive_time {
                return Err(Error::Data(format!(
                    "passenger {i} boarded at {b} with no bus at stop {}",
                    p.origin
                )));
            }
        }
        match (p.board_time, p.alight_time) {
            (None, Some(_)) => {
                return Err(Error::Data(format!(
                    "passenger {i} alighted without boarding"
                )))
            }
            (Some(b), Some(a)) if a < b => {
                return Err(Error::Data(format!(
                    "passenger {i} alighted before boarding"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Headways between successive bus arrivals at each stop.
pub fn arrival_headways(n_stops: usize, events: &[ArrivalEvent]) -> Result<Vec<Vec<f64>>> {
    let by_stop = events_by_stop(n_stops, events)?;
    Ok(by_stop
        .iter()
        .map(|evs| evs.windows(2).map(|w| w[1].time - w[0].time).collect())
        .collect())
}

pub fn compute_metrics(
    config: &RouteConfig,
    events: &[ArrivalEvent],
    passengers: &[Passenger],
    trace: &[DecisionRecord],
) -> Result<EpisodeMetrics> {
    let n_stops = config.n_stops();
    let by_stop = events_by_stop(n_stops, events)?;
    check_consistency(config, &by_stop, passengers)?;
    let windows = service_windows(&by_stop);

    let waits: Vec<f64> = passengers
        .iter()
        .filter_map(|p| counted_wait(p, windows[p.origin], config.horizon))
        .collect();
    let ajt = mean(
        passengers
            .iter()
            .filter_map(|p| Some(p.alight_time? - p.board_time?)),
    );

    let mut dispatch = vec![None; config.n_services];
    let mut finish = vec![None; config.n_services];
    for e in events {
        let slot = |v: &mut Vec<Option<f64>>| -> Result<()> {
            let cell = v.get_mut(e.bus_index).ok_or_else(|| {
                Error::Data(format!(
                    "event for bus {} of {}",
                    e.bus_index, config.n_services
                ))
            })?;
            *cell = Some(e.time);
            Ok(())
        };
        if e.stop == 0 {
            slot(&mut dispatch)?;
        }
        if e.stop + 1 == n_stops {
            slot(&mut finish)?;
        }
    }
    let att = mean(
        dispatch
            .iter()
            .zip(&finish)
            .filter_map(|(d, f)| Some((*f)? - (*d)?)),
    );

    let occupancy: Vec<f64> = events
        .iter()
        .filter(|e| e.stop + 1 < n_stops && e.departure_time.is_some())
        .map(|e| f64::from(e.occupancy))
        .collect();

    let headway_samples: Vec<Vec<f64>> = by_stop
        .iter()
        .map(|evs| evs.windows(2).map(|w| w[1].time - w[0].time).collect())
        .collect();
    let cv2_by_stop = headway_samples.iter().map(|h| cv2(h).ok()).collect();

    Ok(EpisodeMetrics {
        aht: mean(trace.iter().map(|d| d.hold_s)),
        awt: mean(waits.iter().copied()),
        ajt,
        att,
        aod: dispersion(&occupancy),
        cv2_by_stop,
        headway_samples,
        n_waiting_counted: waits.len(),
    })
}

/// Stop-level indicators of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRow {
    pub stop: usize,
    pub awt: f64,
    pub aod: f64,
    /// Mean extra time from dispatch to arrival at this stop relative to the
    /// reference run, seconds.
    pub added_travel_time: f64,
}

fn arrival_offsets(
    n_services: usize,
    n_stops: usize,
    events: &[ArrivalEvent],
) -> Vec<Vec<Option<f64>>> {
    let mut t = vec![vec![None; n_stops]; n_services];
    for e in events {
        if e.bus_index < n_services && e.stop < n_stops {
            t[e.bus_index][e.stop] = Some(e.time);
        }
    }
    t.iter()
        .map(|row| {
            let d = row[0];
            row.iter().map(|a| Some((*a)? - d?)).collect()
        })
        .collect()
}

/// Per-stop waiting time, occupancy dispersion and travel time added
/// relative to `reference` (usually the uncontrolled run on the same seed).
pub fn stopwise_series(
    config: &RouteConfig,
    events: &[ArrivalEvent],
    passengers: &[Passenger],
    reference: Option<&[ArrivalEvent]>,
) -> Result<Vec<StopRow>> {
    let reference =
        reference.ok_or_else(|| Error::State("stop-wise series needs a reference run".into()))?;
    let n_stops = config.n_stops();
    let by_stop = events_by_stop(n_stops, events)?;
    let windows = service_windows(&by_stop);
    let run = arrival_offsets(config.n_services, n_stops, events);
    let base = arrival_offsets(config.n_services, n_stops, reference);
    Ok((0..n_stops)
        .map(|s| {
            let awt = mean(
                passengers
                    .iter()
                    .filter(|p| p.origin == s)
                    .filter_map(|p| counted_wait(p, windows[s], config.horizon)),
            );
            let occ: Vec<f64> = by_stop[s]
                .iter()
                .filter(|e| e.departure_time.is_some())
                .map(|e| f64::from(e.occupancy))
                .collect();
            let added = mean((0..config.n_services).filter_map(|b| Some(run[b][s]? - base[b][s]?)));
            StopRow {
                stop: s,
                awt,
                aod: dispersion(&occ),
                added_travel_time: added,
            }
        })
        .collect())
}
