use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of one bus route and its operating parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    /// Distance of every stop from the departure terminal, meters.
    pub stop_positions: Vec<f64>,
    pub n_services: usize,
    /// Mean dispatch headway at the terminal, seconds.
    pub dispatch_mean: f64,
    pub dispatch_std: f64,
    /// Nominal cruising speed, km/h.
    pub nominal_speed: f64,
    pub capacity: u32,
    /// Alighting time per passenger, seconds.
    pub t_alight: f64,
    /// Boarding time per passenger, seconds.
    pub t_board: f64,
    /// Largest admissible holding duration, seconds.
    pub max_hold: f64,
    pub horizon: f64,
}

impl RouteConfig {
    /// Constants the simulator uses unless a route file overrides them.
    pub const DEFAULT_T_ALIGHT: f64 = 1.8;
    pub const DEFAULT_T_BOARD: f64 = 3.0;
    pub const DEFAULT_SPEED_KMH: f64 = 30.0;
    pub const DEFAULT_CAPACITY: u32 = 120;
    pub const DEFAULT_MAX_HOLD: f64 = 180.0;
    pub const DEFAULT_HORIZON: f64 = 57_600.0;

    pub fn n_stops(&self) -> usize {
        self.stop_positions.len()
    }

    pub fn route_length(&self) -> f64 {
        self.stop_positions.last().copied().unwrap_or(0.0)
    }

    /// Nominal speed in meters per second.
    pub fn speed_mps(&self) -> f64 {
        self.nominal_speed / 3.6
    }

    pub fn validate(&self) -> Result<()> {
        let stops = &self.stop_positions;
        if stops.len() < 2 {
            return Err(Error::Config(format!(
                "stop_positions must hold at least 2 stops, got {}",
                stops.len()
            )));
        }
        if stops[0] != 0.0 {
            return Err(Error::Config(format!(
                "stop_positions[0] must be 0, got {}",
                stops[0]
            )));
        }
        if stops.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("stop_positions must be finite".into()));
        }
        if let Some(w) = stops.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "stop_positions must be strictly increasing (index {} -> {})",
                w,
                w + 1
            )));
        }
        if self.n_services == 0 {
            return Err(Error::Config("n_services must be at least 1".into()));
        }
        positive("dispatch_mean", self.dispatch_mean)?;
        non_negative("dispatch_std", self.dispatch_std)?;
        positive("nominal_speed", self.nominal_speed)?;
        if self.capacity < 1 {
            return Err(Error::Config("capacity must be at least 1".into()));
        }
        non_negative("t_alight", self.t_alight)?;
        non_negative("t_board", self.t_board)?;
        non_negative("max_hold", self.max_hold)?;
        positive("horizon", self.horizon)?;
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    }
}

/// Stationary passenger demand: Poisson arrivals per stop and an
/// origin-destination split over downstream stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// Passengers per second arriving at each stop.
    pub boarding_rate: Vec<f64>,
    /// Row `o` is the destination distribution of passengers boarding at `o`.
    pub alight_weights: Vec<Vec<f64>>,
}

impl DemandProfile {
    /// Tolerance on the row sums of `alight_weights`.
    pub const ROW_SUM_TOL: f64 = 1e-9;

    /// Every origin sends its passengers uniformly to all downstream stops.
    pub fn uniform(boarding_rate: Vec<f64>) -> Self {
        let n = boarding_rate.len();
        let alight_weights = (0..n)
            .map(|o| {
                let down = n.saturating_sub(o + 1);
                (0..n)
                    .map(|d| if d > o { 1.0 / down as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut boarding_rate = boarding_rate;
        if let Some(last) = boarding_rate.last_mut() {
            *last = 0.0;
        }
        DemandProfile {
            boarding_rate,
            alight_weights,
        }
    }

    /// Zero demand everywhere.
    pub fn empty(n_stops: usize) -> Self {
        Self::uniform(vec![0.0; n_stops])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        DemandProfile {
            boarding_rate: self.boarding_rate.iter().map(|r| r * factor).collect(),
            alight_weights: self.alight_weights.clone(),
        }
    }

    pub fn validate(&self, n_stops: usize) -> Result<()> {
        if self.boarding_rate.len() != n_stops {
            return Err(Error::Config(format!(
                "boarding_rates has {} entries for {} stops",
                self.boarding_rate.len(),
                n_stops
            )));
        }
        if let Some(s) = self
            .boarding_rate
            .iter()
            .position(|r| !r.is_finite() || *r < 0.0)
        {
            return Err(Error::Config(format!(
                "boarding_rates[{s}] must be finite and >= 0"
            )));
        }
        if self.boarding_rate[n_stops - 1] != 0.0 {
            return Err(Error::Config(
                "boarding_rates at the last stop must be 0".into(),
            ));
        }
        if self.alight_weights.len() != n_stops {
            return Err(Error::Config(format!(
                "alight_weights has {} rows for {} stops",
                self.alight_weights.len(),
                n_stops
            )));
        }
        for (o, row) in self.alight_weights.iter().enumerate() {
            if row.len() != n_stops {
                return Err(Error::Config(format!(
                    "alight_weights[{o}] has {} entries for {} stops",
                    row.len(),
                    n_stops
                )));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::Config(format!(
                    "alight_weights[{o}] must be finite and >= 0"
                )));
            }
            if let Some(d) = row[..=o].iter().position(|w| *w != 0.0) {
                return Err(Error::Config(format!(
                    "alight_weights[{o}][{d}] must be 0 (destination must lie downstream)"
                )));
            }
            if o + 1 < n_stops {
                let sum: f64 = row[o + 1..].iter().sum();
                if (sum - 1.0).abs() > Self::ROW_SUM_TOL {
                    return Err(Error::Config(format!(
                        "alight_weights[{o}] must sum to 1 over downstream stops, got {sum}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// On-disk layout of a route file (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteFile {
    #[serde(default)]
    name: Option<String>,
    stops: Vec<f64>,
    services: usize,
    dispatch_mean_s: f64,
    dispatch_std_s: f64,
    #[serde(default = "default_speed")]
    speed_kmh: f64,
    #[serde(default = "default_capacity")]
    capacity: u32,
    #[serde(default = "default_t_alight")]
    t_alight_s: f64,
    #[serde(default = "default_t_board")]
    t_board_s: f64,
    #[serde(default = "default_max_hold")]
    max_hold_s: f64,
    #[serde(default = "default_horizon")]
    horizon_s: f64,
    boarding_rates: Vec<f64>,
    alight_weights: Vec<Vec<f64>>,
}

fn default_speed() -> f64 {
    RouteConfig::DEFAULT_SPEED_KMH
}
fn default_capacity() -> u32 {
    RouteConfig::DEFAULT_CAPACITY
}
fn default_t_alight() -> f64 {
    RouteConfig::DEFAULT_T_ALIGHT
}
fn default_t_board() -> f64 {
    RouteConfig::DEFAULT_T_BOARD
}
fn default_max_hold() -> f64 {
    RouteConfig::DEFAULT_MAX_HOLD
}
fn default_horizon() -> f64 {
    RouteConfig::DEFAULT_HORIZON
}

/// A route together with its demand, as read from or written to a route file.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSpec {
    pub name: String,
    pub config: RouteConfig,
    pub demand: DemandProfile,
}

impl RouteSpec {
    /// Parses and validates a TOML route file.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RouteFile =
            toml::from_str(text).map_err(|e| Error::format("route file", e.message()))?;
        let config = RouteConfig {
            stop_positions: file.stops,
            n_services: file.services,
            dispatch_mean: file.dispatch_mean_s,
            dispatch_std: file.dispatch_std_s,
            nominal_speed: file.speed_kmh,
            capacity: file.capacity,
            t_alight: file.t_alight_s,
            t_board: file.t_board_s,
            max_hold: file.max_hold_s,
            horizon: file.horizon_s,
        };
        config.validate()?;
        let demand = DemandProfile {
            boarding_rate: file.boarding_rates,
            alight_weights: file.alight_weights,
        };
        demand.validate(config.n_stops())?;
        Ok(RouteSpec {
            name: file.name.unwrap_or_else(|| "route".to_string()),
            config,
            demand,
        })
    }

    pub fn to_toml_string(&self) -> String {
        let file = RouteFile {
            name: Some(self.name.clone()),
            stops: self.config.stop_positions.clone(),
            services: self.config.n_services,
            dispatch_mean_s: self.config.dispatch_mean,
            dispatch_std_s: self.config.dispatch_std,
            speed_kmh: self.config.nominal_speed,
            capacity: self.config.capacity,
            t_alight_s: self.config.t_alight,
            t_board_s: self.config.t_board,
            max_hold_s: self.config.max_hold,
            horizon_s: self.config.horizon,
            boarding_rates: self.demand.boarding_rate.clone(),
            alight_weights: self.demand.alight_weights.clone(),
        };
        toml::to_string(&file).expect("route file serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> RouteConfig {
        RouteConfig {
            stop_positions: vec![0.0, 500.0, 1000.0],
            n_services: 2,
            dispatch_mean: 600.0,
            dispatch_std: 0.0,
            nominal_speed: 30.0,
            capacity: 120,
            t_alight: 1.8,
            t_board: 3.0,
            max_hold: 180.0,
            horizon: 3600.0,
        }
    }

    #[test]
    fn rejects_non_increasing_stops() {
        let mut c = small_config();
        c.stop_positions = vec![0.0, 500.0, 500.0];
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("strictly increasing"), "{err}");
    }

    #[test]
    fn rejects_single_stop_and_bad_scalars() {
        let mut c = small_config();
        c.stop_positions = vec![0.0];
        assert!(c.validate().unwrap_err().to_string().contains("at least 2"));
        let mut c = small_config();
        c.dispatch_mean = 0.0;
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("dispatch_mean"));
        let mut c = small_config();
        c.capacity = 0;
        assert!(c.validate().unwrap_err().to_string().contains("capacity"));
        let mut c = small_config();
        c.max_hold = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("max_hold"));
    }

    #[test]
    fn uniform_demand_is_valid() {
        let d = DemandProfile::uniform(vec![0.1, 0.2, 0.3, 0.4]);
        d.validate(4).unwrap();
        assert_eq!(d.boarding_rate[3], 0.0);
        assert_eq!(d.alight_weights[0][1..], [1.0 / 3.0; 3]);
    }

    #[test]
    fn demand_rejects_upstream_destinations_and_bad_sums() {
        let mut d = DemandProfile::uniform(vec![0.1, 0.1, 0.0]);
        d.alight_weights[1][0] = 0.5;
        assert!(d
            .validate(3)
            .unwrap_err()
            .to_string()
            .contains("downstream"));
        let mut d = DemandProfile::uniform(vec![0.1, 0.1, 0.0]);
        d.alight_weights[0] = vec![0.0, 0.5, 0.4];
        assert!(d.validate(3).unwrap_err().to_string().contains("sum to 1"));
        let mut d = DemandProfile::uniform(vec![0.1, 0.1, 0.0]);
        d.boarding_rate[2] = 0.1;
        assert!(d.validate(3).unwrap_err().to_string().contains("last stop"));
    }

    #[test]
    fn route_file_round_trips() {
        let spec = RouteSpec {
            name: "tiny".into(),
            config: small_config(),
            demand: DemandProfile::uniform(vec![0.01, 0.02, 0.0]),
        };
        let text = spec.to_toml_string();
        let back = RouteSpec::from_toml_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn route_file_defaults_and_errors() {
        let text = r#"
stops = [0.0, 400.0]
services = 3
dispatch_mean_s = 600.0
dispatch_std_s = 60.0
boarding_rates = [0.01, 0.0]
alight_weights = [[0.0, 1.0], [0.0, 0.0]]
"#;
        let spec = RouteSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.config.capacity, 120);
        assert_eq!(spec.config.t_board, 3.0);
        assert_eq!(spec.config.horizon, 57_600.0);

        let bad = text.replace("services = 3", "services = 0");
        assert!(matches!(
            RouteSpec::from_toml_str(&bad),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RouteSpec::from_toml_str("stops = ["),
            Err(Error::Format { .. })
        ));
    }
}
