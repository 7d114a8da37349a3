//! Static transportation scenario: station graph, travel times, prices, costs,
//! and time-varying Poisson demand rates.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Currency is carried as integer cents inside solvers and the environment.
pub type Cents = i64;

pub fn to_cents(amount: f64) -> Cents {
    (amount * 100.0).round() as Cents
}

pub fn from_cents(c: Cents) -> f64 {
    c as f64 / 100.0
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("trip record {row}: station {station} out of range 0..{n_stations}")]
    StationOutOfRange { row: usize, station: usize, n_stations: usize },
    #[error("trip records: {0}")]
    Records(String),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { field: field.into(), message: message.into() }
}

fn default_step_minutes() -> f64 {
    3.0
}

/// On-disk JSON layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    n_stations: usize,
    #[serde(default = "default_step_minutes")]
    step_minutes: f64,
    episode_len: usize,
    plan_horizon: usize,
    fleet_size: u32,
    cost_per_step: f64,
    travel_time: Vec<Vec<u32>>,
    price: Vec<Vec<f64>>,
    demand_rate: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    price_override: Option<Vec<Vec<Vec<f64>>>>,
}

/// Immutable, validated scenario. Matrices are stored row-major and flat.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    name: String,
    n: usize,
    step_minutes: f64,
    episode_len: usize,
    plan_horizon: usize,
    fleet_size: u32,
    cost_per_step: f64,
    travel_time: Vec<u32>,
    price: Vec<f64>,
    demand_rate: Vec<f64>,
    price_override: Option<Vec<f64>>,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        step_minutes: f64,
        episode_len: usize,
        plan_horizon: usize,
        fleet_size: u32,
        cost_per_step: f64,
        travel_time: Vec<Vec<u32>>,
        price: Vec<Vec<f64>>,
        demand_rate: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, ScenarioError> {
        let n = travel_time.len();
        Self::from_file(ScenarioFile {
            name: name.into(),
            n_stations: n,
            step_minutes,
            episode_len,
            plan_horizon,
            fleet_size,
            cost_per_step,
            travel_time,
            price,
            demand_rate,
            price_override: None,
        })
    }

    fn from_file(f: ScenarioFile) -> Result<Self, ScenarioError> {
        let n = f.n_stations;
        if n == 0 {
            return Err(invalid("n_stations", "must be positive"));
        }
        if f.fleet_size == 0 {
            return Err(invalid("fleet_size", "must be at least 1"));
        }
        if f.episode_len == 0 {
            return Err(invalid("episode_len", "must be positive"));
        }
        if !(f.step_minutes.is_finite() && f.step_minutes > 0.0) {
            return Err(invalid("step_minutes", "must be a positive number"));
        }
        if !(f.cost_per_step.is_finite() && f.cost_per_step >= 0.0) {
            return Err(invalid("cost_per_step", "must be finite and non-negative"));
        }
        let travel_time = flatten_square("travel_time", &f.travel_time, n)?;
        for i in 0..n {
            if travel_time[i * n + i] != 0 {
                return Err(invalid(format!("travel_time[{i}][{i}]"), "diagonal must be zero"));
            }
        }
        let price = flatten_square("price", &f.price, n)?;
        check_non_negative("price", &price, n)?;
        let slices = f.episode_len + f.plan_horizon;
        if f.demand_rate.len() != slices {
            return Err(invalid(
                "demand_rate",
                format!(
                    "needs episode_len + plan_horizon = {slices} time slices, found {}",
                    f.demand_rate.len()
                ),
            ));
        }
        let mut demand_rate = Vec::with_capacity(slices * n * n);
        for (t, slice) in f.demand_rate.iter().enumerate() {
            let flat = flatten_square(&format!("demand_rate[{t}]"), slice, n)?;
            check_non_negative(&format!("demand_rate[{t}]"), &flat, n)?;
            demand_rate.extend(flat);
        }
        let price_override = match &f.price_override {
            None => None,
            Some(p) => {
                if p.len() != slices {
                    return Err(invalid("price_override", format!("needs {slices} time slices, found {}", p.len())));
                }
                let mut flat = Vec::with_capacity(slices * n * n);
                for (t, slice) in p.iter().enumerate() {
                    let s = flatten_square(&format!("price_override[{t}]"), slice, n)?;
                    check_non_negative(&format!("price_override[{t}]"), &s, n)?;
                    flat.extend(s);
                }
                Some(flat)
            }
        };
        Ok(Self {
            name: f.name,
            n,
            step_minutes: f.step_minutes,
            episode_len: f.episode_len,
            plan_horizon: f.plan_horizon,
            fleet_size: f.fleet_size,
            cost_per_step: f.cost_per_step,
            travel_time,
            price,
            demand_rate,
            price_override,
        })
    }

    fn to_file(&self) -> ScenarioFile {
        let n = self.n;
        let nest2 = |v: &[f64]| v.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
        let nest3 = |v: &[f64]| v.chunks(n * n).map(nest2).collect::<Vec<_>>();
        ScenarioFile {
            name: self.name.clone(),
            n_stations: n,
            step_minutes: self.step_minutes,
            episode_len: self.episode_len,
            plan_horizon: self.plan_horizon,
            fleet_size: self.fleet_size,
            cost_per_step: self.cost_per_step,
            travel_time: self.travel_time.chunks(n).map(<[u32]>::to_vec).collect(),
            price: nest2(&self.price),
            demand_rate: nest3(&self.demand_rate),
            price_override: self.price_override.as_deref().map(nest3),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serialises")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_stations(&self) -> usize {
        self.n
    }

    pub fn step_minutes(&self) -> f64 {
        self.step_minutes
    }

    /// Episode length `T` in steps.
    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    /// Planning horizon `K` in steps.
    pub fn plan_horizon(&self) -> usize {
        self.plan_horizon
    }

    /// Number of demand-rate slices (`T + K`).
    pub fn n_slices(&self) -> usize {
        self.episode_len + self.plan_horizon
    }

    pub fn fleet_size(&self) -> u32 {
        self.fleet_size
    }

    pub fn cost_per_step(&self) -> f64 {
        self.cost_per_step
    }

    pub fn travel_time(&self, i: usize, j: usize) -> u32 {
        self.travel_time[i * self.n + j]
    }

    /// Trip cost, always `cost_per_step · τ_ij`.
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.cost_per_step * f64::from(self.travel_time(i, j))
    }

    pub fn cost_cents(&self, i: usize, j: usize) -> Cents {
        to_cents(self.cost(i, j))
    }

    pub fn price(&self, t: usize, i: usize, j: usize) -> f64 {
        match &self.price_override {
            Some(p) => p[(t.min(self.n_slices() - 1) * self.n + i) * self.n + j],
            None => self.price[i * self.n + j],
        }
    }

    pub fn price_cents(&self, t: usize, i: usize, j: usize) -> Cents {
        to_cents(self.price(t, i, j))
    }

    pub fn demand_rate(&self, t: usize, i: usize, j: usize) -> f64 {
        self.demand_rate[(t * self.n + i) * self.n + j]
    }

    /// The `N×N` rate slice at step `t`, row-major.
    pub fn rate_slice(&self, t: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.demand_rate[t * nn..(t + 1) * nn]
    }

    /// Dense `N×N` cost matrix in cents.
    pub fn cost_matrix_cents(&self) -> Vec<Cents> {
        (0..self.n * self.n).map(|k| self.cost_cents(k / self.n, k % self.n)).collect()
    }

    /// Dense `N×N` price matrix in cents at step `t`.
    pub fn price_matrix_cents(&self, t: usize) -> Vec<Cents> {
        (0..self.n * self.n).map(|k| self.price_cents(t, k / self.n, k % self.n)).collect()
    }

    pub fn has_price_override(&self) -> bool {
        self.price_override.is_some()
    }

    /// Returns a copy whose demand rates are all multiplied by `factor`.
    pub fn with_scaled_demand(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.demand_rate.iter_mut().for_each(|r| *r *= factor);
        s
    }

    /// Stable content hash (SHA-256 of the canonical JSON form).
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&self.to_file()).expect("scenario serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

fn flatten_square<T: Copy>(field: &str, rows: &[Vec<T>], n: usize) -> Result<Vec<T>, ScenarioError> {
    if rows.len() != n {
        return Err(invalid(field, format!("expected {n} rows, found {}", rows.len())));
    }
    let mut out = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(invalid(format!("{field}[{i}]"), format!("expected {n} columns, found {}", row.len())));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

fn check_non_negative(field: &str, flat: &[f64], n: usize) -> Result<(), ScenarioError> {
    for (k, v) in flat.iter().enumerate() {
        if !(v.is_finite() && *v >= 0.0) {
            return Err(invalid(format!("{field}[{}][{}]", k / n, k % n), format!("{v} is not a finite non-negative number")));
        }
    }
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    Scenario::from_json(&fs::read_to_string(path)?)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    fs::write(path, scenario.to_json())?;
    Ok(())
}

/// Parameters of the synthetic scenario generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub name: String,
    pub n_stations: usize,
    pub fleet_size: u32,
    pub episode_len: usize,
    pub plan_horizon: usize,
    pub step_minutes: f64,
    /// Mean Poisson rate per off-diagonal OD pair per step.
    pub mean_rate: f64,
    /// Strength of the time-varying origin/destination asymmetry; 0 gives symmetric rates.
    pub imbalance: f64,
    /// Largest travel time in steps (station pairs at maximal distance).
    pub max_travel_time: u32,
    pub cost_per_step: f64,
    pub base_fare: f64,
    pub fare_per_step: f64,
    /// Relative magnitude of per-OD multiplicative noise; applied only when imbalance > 0.
    pub rate_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            n_stations: 4,
            fleet_size: 40,
            episode_len: 20,
            plan_horizon: 6,
            step_minutes: 3.0,
            mean_rate: 1.0,
            imbalance: 1.0,
            max_travel_time: 4,
            cost_per_step: 1.0,
            base_fare: 4.0,
            fare_per_step: 3.0,
            rate_noise: 0.2,
        }
    }
}

impl SyntheticSpec {
    /// Node and fleet counts, trip times, and hourly demand matching the
    /// published statistics of the cities the method was evaluated on.
    pub fn city_preset(city: &str) -> Option<Self> {
        // (nodes, max trip min, avg demand req/hr, vehicles)
        let (name, n, max_min, demand_per_hour, fleet) = match city {
            "nyc-brooklyn" => ("nyc-brooklyn", 14, 68.0, 3162.0, 1500),
            "shenzhen-west" => ("shenzhen-west", 17, 66.0, 4637.0, 1777),
            "san-francisco" => ("san-francisco", 10, 55.0, 1380.0, 374),
            "rome" => ("rome", 13, 69.0, 177.0, 79),
            "washington-dc" => ("washington-dc", 18, 68.0, 1000.0, 1097),
            _ => return None,
        };
        let step_minutes = 3.0;
        let per_step = demand_per_hour * step_minutes / 60.0;
        Some(Self {
            name: name.into(),
            n_stations: n,
            fleet_size: fleet,
            mean_rate: per_step / (n * (n - 1)) as f64,
            max_travel_time: (max_min / step_minutes).round() as u32,
            ..Self::default()
        })
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if !(2..=32).contains(&self.n_stations) {
            return Err(ScenarioError::InvalidSpec(format!("n_stations {} outside [2, 32]", self.n_stations)));
        }
        if !(self.imbalance.is_finite() && self.imbalance >= 0.0) {
            return Err(ScenarioError::InvalidSpec(format!("imbalance {} must be >= 0", self.imbalance)));
        }
        if !(self.mean_rate.is_finite() && self.mean_rate > 0.0) {
            return Err(ScenarioError::InvalidSpec(format!("mean_rate {} must be > 0", self.mean_rate)));
        }
        if self.fleet_size == 0 || self.episode_len == 0 || self.max_travel_time == 0 {
            return Err(ScenarioError::InvalidSpec("fleet_size, episode_len and max_travel_time must be positive".into()));
        }
        if !(self.rate_noise >= 0.0 && self.rate_noise < 1.0) {
            return Err(ScenarioError::InvalidSpec(format!("rate_noise {} outside [0, 1)", self.rate_noise)));
        }
        Ok(())
    }
}

/// Deterministic synthetic scenario for `(spec, seed)`.
///
/// Stations are scattered on the unit square; travel times scale with distance
/// and fares with travel time. Rates follow a symmetric gravity pattern times a
/// per-station origin tendency that oscillates over the day, so the net flow
/// between stations reverses direction within an episode.
pub fn make_synthetic_scenario(spec: &SyntheticSpec, seed: u64) -> Result<Scenario, ScenarioError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_stations;
    let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let popularity: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let phase: Vec<f64> = (0..n).map(|i| std::f64::consts::TAU * i as f64 / n as f64 + rng.gen_range(-0.3..0.3)).collect();
    let mut noise = vec![1.0; n * n];
    if spec.imbalance > 0.0 && spec.rate_noise > 0.0 {
        for i in 0..n {
            for j in (i + 1)..n {
                let e = 1.0 + spec.rate_noise * rng.gen_range(-1.0..1.0);
                noise[i * n + j] = e;
                noise[j * n + i] = e;
            }
        }
    }

    let max_dist = std::f64::consts::SQRT_2;
    let mut travel_time = vec![vec![0u32; n]; n];
    let mut price = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (dx, dy) = (pos[i].0 - pos[j].0, pos[i].1 - pos[j].1);
            let d = (dx * dx + dy * dy).sqrt() / max_dist;
            let tau = ((d * f64::from(spec.max_travel_time)).round() as u32).max(1);
            travel_time[i][j] = tau;
            price[i][j] = spec.base_fare + spec.fare_per_step * f64::from(tau);
        }
    }
    // symmetric in (i, j) whenever imbalance == 0
    for i in 0..n {
        for j in 0..i {
            let tau = travel_time[i][j].max(travel_time[j][i]);
            travel_time[i][j] = tau;
            travel_time[j][i] = tau;
            let p = spec.base_fare + spec.fare_per_step * f64::from(tau);
            price[i][j] = p;
            price[j][i] = p;
        }
    }

    let slices = spec.episode_len + spec.plan_horizon;
    let period = slices as f64;
    let mut raw = vec![vec![vec![0.0; n]; n]; slices];
    let mut total = 0.0;
    for (t, slice) in raw.iter_mut().enumerate() {
        let day = 1.0 + 0.3 * (std::f64::consts::TAU * t as f64 / period).sin();
        let tendency: Vec<f64> =
            (0..n).map(|i| (std::f64::consts::TAU * t as f64 / period + phase[i]).sin()).collect();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let skew = (0.5 * spec.imbalance * (tendency[i] - tendency[j])).exp();
                let r = day * popularity[i] * popularity[j] * noise[i * n + j] * skew;
                slice[i][j] = r;
                total += r;
            }
        }
    }
    let target = spec.mean_rate * (slices * n * (n - 1)) as f64;
    let scale = target / total;
    for slice in &mut raw {
        for row in slice.iter_mut() {
            row.iter_mut().for_each(|r| *r *= scale);
        }
    }
    // exact symmetry survives the scaling only if we copy the upper triangle
    if spec.imbalance == 0.0 {
        for slice in &mut raw {
            for i in 0..n {
                for j in 0..i {
                    slice[i][j] = slice[j][i];
                }
            }
        }
    }

    Scenario::from_file(ScenarioFile {
        name: spec.name.clone(),
        n_stations: n,
        step_minutes: spec.step_minutes,
        episode_len: spec.episode_len,
        plan_horizon: spec.plan_horizon,
        fleet_size: spec.fleet_size,
        cost_per_step: spec.cost_per_step,
        travel_time,
        price,
        demand_rate: raw,
        price_override: None,
    })
}

/// One row of a trip-record CSV (`origin,dest,depart_minute,price`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub origin: usize,
    pub dest: usize,
    pub depart_minute: f64,
    pub price: f64,
}

/// Demand rates per aggregation bin plus trip-weighted mean prices.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedDemand {
    /// `[bin][origin][dest]` Poisson rate per simulation step.
    pub rate: Vec<Vec<Vec<f64>>>,
    /// Mean observed fare per OD; zero where no trip was observed.
    pub price: Vec<Vec<f64>>,
    pub trip_counts: Vec<Vec<u64>>,
    pub bin_minutes: u32,
}

impl AggregatedDemand {
    /// Expands bins into per-step slices (`bin_minutes / step_minutes` each).
    pub fn per_step_rates(&self, step_minutes: f64) -> Vec<Vec<Vec<f64>>> {
        let per_bin = (f64::from(self.bin_minutes) / step_minutes).round().max(1.0) as usize;
        self.rate.iter().flat_map(|b| std::iter::repeat(b.clone()).take(per_bin)).collect()
    }
}

pub fn read_trip_records(path: impl AsRef<Path>) -> Result<Vec<TripRecord>, ScenarioError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ScenarioError::Records(e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| ScenarioError::Records(e.to_string())))
        .collect()
}

/// Bins trip records in `[window_start, window_start + window_minutes)` into
/// `bin_minutes` slots. Records outside the window are not counted.
pub fn aggregate_trip_records(
    records: &[TripRecord],
    n_stations: usize,
    window_start: f64,
    window_minutes: u32,
    bin_minutes: u32,
    step_minutes: f64,
) -> Result<AggregatedDemand, ScenarioError> {
    if bin_minutes == 0 || window_minutes % bin_minutes != 0 {
        return Err(ScenarioError::Records(format!(
            "bin of {bin_minutes} minutes does not divide the {window_minutes}-minute window"
        )));
    }
    let n = n_stations;
    let bins = (window_minutes / bin_minutes) as usize;
    let mut counts = vec![vec![vec![0u64; n]; n]; bins];
    let mut trips = vec![vec![0u64; n]; n];
    let mut fare_sum = vec![vec![0.0; n]; n];
    for (row, r) in records.iter().enumerate() {
        for station in [r.origin, r.dest] {
            if station >= n {
                return Err(ScenarioError::StationOutOfRange { row, station, n_stations: n });
            }
        }
        let offset = r.depart_minute - window_start;
        if offset < 0.0 || offset >= f64::from(window_minutes) {
            continue;
        }
        let b = (offset / f64::from(bin_minutes)) as usize;
        counts[b][r.origin][r.dest] += 1;
        trips[r.origin][r.dest] += 1;
        fare_sum[r.origin][r.dest] += r.price;
    }
    let per_step = step_minutes / f64::from(bin_minutes);
    let rate = counts
        .iter()
        .map(|b| b.iter().map(|row| row.iter().map(|&c| c as f64 * per_step).collect()).collect())
        .collect();
    let price = (0..n)
        .map(|i| (0..n).map(|j| if trips[i][j] > 0 { fare_sum[i][j] / trips[i][j] as f64 } else { 0.0 }).collect())
        .collect();
    Ok(AggregatedDemand { rate, price, trip_counts: trips, bin_minutes })
}
