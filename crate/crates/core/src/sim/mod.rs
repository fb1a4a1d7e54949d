//! Discrete-event simulation of a single bus route.
//!
//! Buses are dispatched from the terminal, cruise between stops at a random
//! per-link speed, dwell to serve passengers and may be held by a controller.
//! Every arrival at a stop is a decision point: [`SimState::advance_to_next_arrival`]
//! stops there and waits for [`SimState::apply_holding`] before the clock moves on.
//! Buses never overtake: a bus cannot leave a stop before its leader has left
//! it and cannot reach the next stop before its leader does.

mod config;
mod demand;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{DemandProfile, RouteConfig, RouteSpec};
pub use demand::{dispatch_times, generate_passengers, Passenger, MIN_DISPATCH_GAP};

use crate::error::{Error, Result};

/// Random stream indices; one per source of randomness so that policies
/// sharing a seed see the same dispatches, passengers and link speeds.
const STREAM_DISPATCH: u64 = 0;
const STREAM_PASSENGERS: u64 = 1;
const STREAM_SPEED: u64 = 2;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Dwell time for a sequential single-door stop: `t_a * alight + t_b * board`.
pub fn dwell_time(config: &RouteConfig, n_alight: u32, n_board: u32) -> f64 {
    config.t_alight * f64::from(n_alight) + config.t_board * f64::from(n_board)
}

/// How link speeds are perturbed around the nominal speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedLaw {
    /// Speed factor drawn from `Uniform(low, high)` once per link traversal.
    Uniform { low: f64, high: f64 },
    /// Fixed speed factor (test hook).
    Pinned(f64),
}

impl Default for SpeedLaw {
    fn default() -> Self {
        SpeedLaw::Uniform {
            low: 0.6,
            high: 1.2,
        }
    }
}

impl SpeedLaw {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SpeedLaw::Uniform { low, high } => rng.random_range(low..=high),
            SpeedLaw::Pinned(u) => u,
        }
    }
}

/// Travel time over `distance` meters at `speed_kmh * factor`.
pub fn travel_time(distance: f64, speed_kmh: f64, factor: f64) -> f64 {
    distance / (speed_kmh * factor / 3.6)
}

/// Draws one speed factor and returns the travel time of one link.
pub fn link_travel_time<R: Rng + ?Sized>(
    distance: f64,
    speed_kmh: f64,
    law: SpeedLaw,
    rng: &mut R,
) -> f64 {
    travel_time(distance, speed_kmh, law.draw(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BusPhase {
    Pending,
    Cruising {
        from_stop: usize,
        depart: f64,
        arrive: f64,
    },
    AtStop {
        stop: usize,
        arrived: f64,
        /// Set once the holding decision for this stop is applied.
        depart: Option<f64>,
    },
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusState {
    pub bus_index: usize,
    pub phase: BusPhase,
    /// Position at the current simulation clock, meters.
    pub position: f64,
    pub next_stop: usize,
    pub occupancy: u32,
    /// Indices into [`SimState::passengers`].
    pub onboard: Vec<usize>,
    pub dispatch_time: f64,
    event: Option<usize>,
}

impl BusState {
    pub fn is_active(&self) -> bool {
        !matches!(self.phase, BusPhase::Pending | BusPhase::Finished)
    }
}

/// One bus arriving at one stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub bus_index: usize,
    pub stop: usize,
    pub time: f64,
    pub n_alighted: u32,
    /// Passengers boarded at this stop, including those who walked on
    /// while the bus was held.
    pub n_boarded: u32,
    /// Passenger service time computed at arrival.
    pub dwell: f64,
    pub hold: Option<f64>,
    /// Actual departure; differs from `time + dwell + hold` only when the
    /// bus had to wait for its leader to leave first.
    pub departure_time: Option<f64>,
    /// Onboard count when leaving the stop (zero at the final stop).
    pub occupancy: u32,
}

impl ArrivalEvent {
    pub fn is_final_stop(&self, n_stops: usize) -> bool {
        self.stop + 1 == n_stops
    }
}

/// Outcome of advancing the simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    Arrival(ArrivalEvent),
    EpisodeDone,
}

/// Passenger accounting; `generated` always equals the sum of the rest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassengerCounts {
    pub generated: usize,
    /// Already at a stop and still waiting.
    pub waiting: usize,
    /// Scheduled to arrive after the current clock.
    pub not_arrived: usize,
    pub onboard: usize,
    pub alighted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Departure,
    Arrival,
}

/// Full state of one simulated route.
#[derive(Debug, Clone)]
pub struct SimState {
    config: RouteConfig,
    seed: u64,
    clock: f64,
    buses: Vec<BusState>,
    passengers: Vec<Passenger>,
    stop_queues: Vec<VecDeque<usize>>,
    event_log: Vec<ArrivalEvent>,
    /// `speed_factors[bus][link]`, drawn up front so every policy sees the
    /// same traffic for a given seed.
    speed_factors: Vec<Vec<f64>>,
    pending: Option<usize>,
    done: bool,
}

/// Builds a simulation with the default speed law.
pub fn build_simulation(
    config: &RouteConfig,
    demand: &DemandProfile,
    seed: u64,
) -> Result<SimState> {
    SimState::new(config, demand, seed, SpeedLaw::default())
}

impl SimState {
    pub fn new(
        config: &RouteConfig,
        demand: &DemandProfile,
        seed: u64,
        speed_law: SpeedLaw,
    ) -> Result<Self> {
        config.validate()?;
        demand.validate(config.n_stops())?;

        let mut rng = stream_rng(seed, STREAM_DISPATCH);
        let dispatch = dispatch_times(
            config.n_services,
            config.dispatch_mean,
            config.dispatch_std,
            &mut rng,
        );

        let mut rng = stream_rng(seed, STREAM_PASSENGERS);
        let by_stop = generate_passengers(demand, config.horizon, &mut rng);

        let mut rng = stream_rng(seed, STREAM_SPEED);
        let n_links = config.n_stops() - 1;
        let speed_factors = (0..config.n_services)
            .map(|_| (0..n_links).map(|_| speed_law.draw(&mut rng)).collect())
            .collect();

        let mut sim = Self::from_parts(config, &dispatch, by_stop, speed_factors)?;
        sim.seed = seed;
        Ok(sim)
    }

    /// Builds a simulation from explicit dispatch times, passengers and
    /// per-link speed factors instead of random draws. Used for scripted
    /// scenarios and hand-checked fixtures.
    pub fn from_parts(
        config: &RouteConfig,
        dispatch: &[f64],
        passengers_by_stop: Vec<Vec<Passenger>>,
        speed_factors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let n_stops = config.n_stops();
        if dispatch.len() != config.n_services {
            return Err(Error::Config(format!(
                "{} dispatch times for {} services",
                dispatch.len(),
                config.n_services
            )));
        }
        if dispatch.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("dispatch times must be nondecreasing".into()));
        }
        if passengers_by_stop.len() != n_stops {
            return Err(Error::Config(
                "one passenger queue per stop required".into(),
            ));
        }
        if speed_factors.len() != config.n_services
            || speed_factors
                .iter()
                .any(|row| row.len() != n_stops - 1 || row.iter().any(|u| u.is_nan() || *u <= 0.0))
        {
            return Err(Error::Config(
                "speed factors must be positive, one per service and link".into(),
            ));
        }
        let mut passengers = Vec::new();
        let mut stop_queues = Vec::with_capacity(n_stops);
        for (stop, mut queue) in passengers_by_stop.into_iter().enumerate() {
            queue.sort_by(|a, b| a.arrive_time.total_cmp(&b.arrive_time));
            let mut ids = VecDeque::with_capacity(queue.len());
            for p in queue {
                if p.origin != stop || p.destination <= stop || p.destination >= n_stops {
                    return Err(Error::Config(format!(
                        "passenger {} -> {} queued at stop {stop}",
                        p.origin, p.destination
                    )));
                }
                ids.push_back(passengers.len());
                passengers.push(p);
            }
            stop_queues.push(ids);
        }
        let buses = dispatch
            .iter()
            .enumerate()
            .map(|(i, &t)| BusState {
                bus_index: i,
                phase: BusPhase::Pending,
                position: 0.0,
                next_stop: 0,
                occupancy: 0,
                onboard: Vec::new(),
                dispatch_time: t,
                event: None,
            })
            .collect();
        Ok(SimState {
            config: config.clone(),
            seed: 0,
            clock: 0.0,
            buses,
            passengers,
            stop_queues,
            event_log: Vec::new(),
            speed_factors,
            pending: None,
            done: false,
        })
    }

    pub fn config(&self) -> &RouteConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn buses(&self) -> &[BusState] {
        &self.buses
    }

    pub fn passengers(&self) -> &[Passenger] {
        &self.passengers
    }

    pub fn event_log(&self) -> &[ArrivalEvent] {
        &self.event_log
    }

    pub fn speed_factors(&self) -> &[Vec<f64>] {
        &self.speed_factors
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The arrival awaiting a holding decision, if any.
    pub fn pending_event(&self) -> Option<&ArrivalEvent> {
        self.pending.map(|i| &self.event_log[i])
    }

    /// Passengers currently queued at `stop` (arrived and not boarded).
    pub fn waiting_at(&self, stop: usize) -> usize {
        self.stop_queues[stop]
            .iter()
            .take_while(|&&p| self.passengers[p].arrive_time <= self.clock)
            .count()
    }

    pub fn passenger_counts(&self) -> PassengerCounts {
        let mut waiting = 0;
        let mut not_arrived = 0;
        for q in &self.stop_queues {
            for &p in q {
                if self.passengers[p].arrive_time <= self.clock {
                    waiting += 1;
                } else {
                    not_arrived += 1;
                }
            }
        }
        let onboard = self.buses.iter().map(|b| b.onboard.len()).sum();
        let alighted = self
            .passengers
            .iter()
            .filter(|p| p.alight_time.is_some())
            .count();
        PassengerCounts {
            generated: self.passengers.len(),
            waiting,
            not_arrived,
            onboard,
            alighted,
        }
    }

    /// Runs the clock forward to the next arrival of any bus at any stop.
    pub fn advance_to_next_arrival(&mut self) -> Result<Advance> {
        if self.pending.is_some() {
            return Err(Error::Protocol(
                "holding decision for the previous arrival has not been applied".into(),
            ));
        }
        if self.done {
            return Ok(Advance::EpisodeDone);
        }
        loop {
            let Some((time, kind, bus)) = self.next_internal_event() else {
                self.finish();
                return Ok(Advance::EpisodeDone);
            };
            if time > self.config.horizon {
                self.clock = self.config.horizon;
                self.finish();
                return Ok(Advance::EpisodeDone);
            }
            self.clock = time;
            match kind {
                Kind::Departure => self.depart(bus),
                Kind::Arrival => {
                    let event = self.arrive(bus);
                    self.refresh_positions();
                    return Ok(Advance::Arrival(event));
                }
            }
        }
    }

    fn finish(&mut self) {
        self.done = true;
        self.refresh_positions();
    }

    fn next_internal_event(&self) -> Option<(f64, Kind, usize)> {
        let mut best: Option<(f64, Kind, usize)> = None;
        for bus in &self.buses {
            let candidate = match bus.phase {
                BusPhase::Pending => Some((bus.dispatch_time, Kind::Arrival)),
                BusPhase::Cruising { arrive, .. } => Some((arrive, Kind::Arrival)),
                BusPhase::AtStop {
                    depart: Some(d), ..
                } => Some((d, Kind::Departure)),
                BusPhase::AtStop { depart: None, .. } | BusPhase::Finished => None,
            };
            if let Some((t, k)) = candidate {
                let key = (t, k, bus.bus_index);
                let better = match best {
                    None => true,
                    Some(b) => t
                        .total_cmp(&b.0)
                        .then(k.cmp(&b.1))
                        .then(bus.bus_index.cmp(&b.2))
                        .is_lt(),
                };
                if better {
                    best = Some(key);
                }
            }
        }
        best
    }

    fn arrive(&mut self, i: usize) -> ArrivalEvent {
        let t = self.clock;
        let stop = match self.buses[i].phase {
            BusPhase::Pending => 0,
            BusPhase::Cruising { from_stop, .. } => from_stop + 1,
            _ => unreachable!("arrival scheduled only for pending or cruising buses"),
        };
        let n_stops = self.config.n_stops();

        let bus = &mut self.buses[i];
        let mut n_alighted = 0u32;
        let passengers = &mut self.passengers;
        bus.onboard.retain(|&p| {
            if passengers[p].destination == stop {
                passengers[p].alight_time = Some(t);
                n_alighted += 1;
                false
            } else {
                true
            }
        });
        bus.occupancy = bus.onboard.len() as u32;

        let final_stop = stop + 1 == n_stops;
        let mut n_boarded = 0u32;
        if !final_stop {
            n_boarded = self.board(i, stop, t, false);
        }
        let bus = &mut self.buses[i];
        let dwell = dwell_time(&self.config, n_alighted, n_boarded);
        bus.next_stop = stop;
        bus.position = self.config.stop_positions[stop];

        let event = ArrivalEvent {
            bus_index: i,
            stop,
            time: t,
            n_alighted,
            n_boarded,
            dwell,
            hold: None,
            departure_time: None,
            occupancy: bus.occupancy,
        };
        let idx = self.event_log.len();
        self.event_log.push(event.clone());
        if final_stop {
            debug_assert!(bus.onboard.is_empty());
            bus.phase = BusPhase::Finished;
            bus.event = None;
        } else {
            bus.phase = BusPhase::AtStop {
                stop,
                arrived: t,
                depart: None,
            };
            bus.event = Some(idx);
            self.pending = Some(idx);
        }
        event
    }

    /// Boards queued passengers who have arrived by `t`, up to capacity.
    /// Returns the number boarded. Walk-on passengers (boarding while the
    /// bus is held) board at their own arrival time.
    fn board(&mut self, i: usize, stop: usize, t: f64, walk_on: bool) -> u32 {
        let capacity = self.config.capacity;
        let bus = &mut self.buses[i];
        let queue = &mut self.stop_queues[stop];
        let mut n = 0;
        while bus.occupancy < capacity {
            let Some(&p) = queue.front() else { break };
            let pax = &mut self.passengers[p];
            if pax.arrive_time > t {
                break;
            }
            queue.pop_front();
            pax.board_time = Some(if walk_on { pax.arrive_time } else { t });
            bus.onboard.push(p);
            bus.occupancy += 1;
            n += 1;
        }
        n
    }

    fn depart(&mut self, i: usize) {
        let BusPhase::AtStop {
            stop,
            arrived,
            depart: Some(planned),
        } = self.buses[i].phase
        else {
            unreachable!("departure scheduled only for held buses");
        };
        let t = self.clock;
        debug_assert_eq!(planned, t);

        // A bus may not leave before its leader has left the same stop.
        if i > 0 {
            if let BusPhase::AtStop {
                stop: ls,
                depart: Some(ld),
                ..
            } = self.buses[i - 1].phase
            {
                if ls == stop && ld > t {
                    self.buses[i].phase = BusPhase::AtStop {
                        stop,
                        arrived,
                        depart: Some(ld),
                    };
                    return;
                }
            }
        }

        let walked_on = self.board(i, stop, t, true);
        let distance = self.config.stop_positions[stop + 1] - self.config.stop_positions[stop];
        let factor = self.speed_factors[i][stop];
        let mut arrive = t + travel_time(distance, self.config.nominal_speed, factor);
        if i > 0 {
            if let BusPhase::Cruising {
                from_stop,
                arrive: la,
                ..
            } = self.buses[i - 1].phase
            {
                if from_stop == stop {
                    arrive = arrive.max(la);
                }
            }
        }

        let bus = &mut self.buses[i];
        if let Some(e) = bus.event.take() {
            let ev = &mut self.event_log[e];
            ev.n_boarded += walked_on;
            ev.departure_time = Some(t);
            ev.occupancy = bus.occupancy;
        }
        bus.phase = BusPhase::Cruising {
            from_stop: stop,
            depart: t,
            arrive,
        };
        bus.next_stop = stop + 1;
    }

    /// Applies the holding decision for the pending arrival.
    pub fn apply_holding(&mut self, event: &ArrivalEvent, hold: f64) -> Result<()> {
        let Some(idx) = self.pending else {
            return Err(Error::Protocol("no arrival is awaiting a decision".into()));
        };
        let pending = &self.event_log[idx];
        if pending.bus_index != event.bus_index
            || pending.stop != event.stop
            || pending.time != event.time
        {
            return Err(Error::Protocol(format!(
                "decision for bus {} at stop {} but bus {} at stop {} is pending",
                event.bus_index, event.stop, pending.bus_index, pending.stop
            )));
        }
        if !(hold.is_finite() && (0.0..=self.config.max_hold).contains(&hold)) {
            return Err(Error::Argument(format!(
                "hold {hold} s outside [0, {}]",
                self.config.max_hold
            )));
        }
        let ev = &mut self.event_log[idx];
        let depart = ev.time + ev.dwell + hold;
        ev.hold = Some(hold);
        let bus = &mut self.buses[ev.bus_index];
        if let BusPhase::AtStop { stop, arrived, .. } = bus.phase {
            bus.phase = BusPhase::AtStop {
                stop,
                arrived,
                depart: Some(depart),
            };
        }
        self.pending = None;
        Ok(())
    }

    fn refresh_positions(&mut self) {
        let t = self.clock;
        for k in 0..self.buses.len() {
            self.buses[k].position = self.position_at(k, t);
        }
    }

    /// Position of bus `i` at time `t` (meaningful for `t` within its current phase).
    pub fn position_at(&self, i: usize, t: f64) -> f64 {
        let stops = &self.config.stop_positions;
        match self.buses[i].phase {
            BusPhase::Pending => 0.0,
            BusPhase::Finished => self.config.route_length(),
            BusPhase::AtStop { stop, .. } => stops[stop],
            BusPhase::Cruising {
                from_stop,
                depart,
                arrive,
            } => {
                let frac = ((t - depart) / (arrive - depart)).clamp(0.0, 1.0);
                stops[from_stop] + frac * (stops[from_stop + 1] - stops[from_stop])
            }
        }
    }

    /// Forward and backward headways of bus `i` at the current clock, seconds.
    ///
    /// Headways are positional gaps divided by the nominal speed. The lead
    /// bus uses the mean dispatch headway as its forward headway; a bus with
    /// no active follower counts the time until the next dispatch plus its
    /// own distance from the terminal.
    pub fn headways(&self, i: usize) -> Result<(f64, f64)> {
        let Some(bus) = self.buses.get(i) else {
            return Err(Error::State(format!("no bus {i}")));
        };
        if !bus.is_active() {
            return Err(Error::State(format!("bus {i} is not active")));
        }
        let v = self.config.speed_mps();
        let p = bus.position;
        let forward = match i.checked_sub(1).map(|l| &self.buses[l]) {
            Some(leader) if leader.is_active() => (leader.position - p) / v,
            _ => self.config.dispatch_mean,
        };
        let backward = match self.buses.get(i + 1) {
            Some(f) if f.is_active() => (p - f.position) / v,
            Some(f) if f.phase == BusPhase::Pending => {
                (f.dispatch_time - self.clock).max(0.0) + p / v
            }
            _ => self.config.dispatch_mean,
        };
        Ok((forward.max(0.0), backward.max(0.0)))
    }

    /// Forward headways of every active bus, ordered by bus index.
    pub fn fleet_forward_headways(&self) -> Vec<f64> {
        self.buses
            .iter()
            .filter(|b| b.is_active())
            .map(|b| self.headways(b.bus_index).expect("active bus").0)
            .collect()
    }

    pub fn active_buses(&self) -> impl Iterator<Item = &BusState> {
        self.buses.iter().filter(|b| b.is_active())
    }
}
