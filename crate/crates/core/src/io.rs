//! CSV import and export of episode logs.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::DecisionRecord;
use crate::error::{Error, Result};
use crate::sim::{ArrivalEvent, Passenger};

/// One arrival event as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub bus: usize,
    pub stop: usize,
    pub arrive_s: f64,
    pub depart_s: Option<f64>,
    pub dwell_s: f64,
    pub boarded: u32,
    pub alighted: u32,
    pub occupancy: u32,
    pub hold_s: Option<f64>,
}

impl From<&ArrivalEvent> for EventRow {
    fn from(e: &ArrivalEvent) -> Self {
        EventRow {
            bus: e.bus_index,
            stop: e.stop,
            arrive_s: e.time,
            depart_s: e.departure_time,
            dwell_s: e.dwell,
            boarded: e.n_boarded,
            alighted: e.n_alighted,
            occupancy: e.occupancy,
            hold_s: e.hold,
        }
    }
}

impl From<EventRow> for ArrivalEvent {
    fn from(r: EventRow) -> Self {
        ArrivalEvent {
            bus_index: r.bus,
            stop: r.stop,
            time: r.arrive_s,
            n_alighted: r.alighted,
            n_boarded: r.boarded,
            dwell: r.dwell_s,
            hold: r.hold_s,
            departure_time: r.depart_s,
            occupancy: r.occupancy,
        }
    }
}

/// One passenger as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassengerRow {
    pub origin: usize,
    pub destination: usize,
    pub arrive_s: f64,
    pub board_s: Option<f64>,
    pub alight_s: Option<f64>,
}

impl From<&Passenger> for PassengerRow {
    fn from(p: &Passenger) -> Self {
        PassengerRow {
            origin: p.origin,
            destination: p.destination,
            arrive_s: p.arrive_time,
            board_s: p.board_time,
            alight_s: p.alight_time,
        }
    }
}

impl From<PassengerRow> for Passenger {
    fn from(r: PassengerRow) -> Self {
        Passenger {
            origin: r.origin,
            destination: r.destination,
            arrive_time: r.arrive_s,
            board_time: r.board_s,
            alight_time: r.alight_s,
        }
    }
}

pub fn write_rows<T: Serialize, W: Write>(out: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::format(what, "non-finite value"))
    }
}

pub fn write_event_log<W: Write>(out: W, events: &[ArrivalEvent]) -> Result<()> {
    write_rows(out, events.iter().map(EventRow::from))
}

pub fn read_event_log<R: Read>(input: R) -> Result<Vec<ArrivalEvent>> {
    let rows: Vec<EventRow> = read_rows(input)?;
    for r in &rows {
        check_finite(
            "event log",
            [
                r.arrive_s,
                r.dwell_s,
                r.depart_s.unwrap_or(0.0),
                r.hold_s.unwrap_or(0.0),
            ],
        )?;
    }
    Ok(rows.into_iter().map(ArrivalEvent::from).collect())
}

pub fn write_passengers<W: Write>(out: W, passengers: &[Passenger]) -> Result<()> {
    write_rows(out, passengers.iter().map(PassengerRow::from))
}

pub fn read_passengers<R: Read>(input: R) -> Result<Vec<Passenger>> {
    let rows: Vec<PassengerRow> = read_rows(input)?;
    for r in &rows {
        check_finite(
            "passenger log",
            [
                r.arrive_s,
                r.board_s.unwrap_or(0.0),
                r.alight_s.unwrap_or(0.0),
            ],
        )?;
    }
    Ok(rows.into_iter().map(Passenger::from).collect())
}

pub fn write_trace<W: Write>(out: W, trace: &[DecisionRecord]) -> Result<()> {
    write_rows(out, trace)
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<DecisionRecord>> {
    let rows: Vec<DecisionRecord> = read_rows(input)?;
    for r in &rows {
        check_finite(
            "decision trace",
            [
                r.t,
                r.obs_occ,
                r.obs_fh,
                r.obs_bh,
                r.action,
                r.hold_s,
                r.reward.unwrap_or(0.0),
            ],
        )?;
    }
    Ok(rows)
}

/// Writes `contents` produced by `f` to `path`, creating parent directories.
pub fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
