//! Per-RU fronthaul traffic: an M/M/inf session process per cell whose
//! occupancy sets the variable eCPRI rate, per-TTI payload sizing, RU
//! processing jitter, and the residential background reservation on CO
//! channels.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{rng_stream, Nanos, RngStream, NS_PER_S};

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("erlang load must be finite and non-negative, got {0}")]
    BadLoad(f64),
    #[error("mean holding time must be positive, got {0} s")]
    BadHolding(f64),
    #[error("n_full must be at least 1")]
    BadNFull,
    #[error("background fraction must lie in [0, 1], got {0}")]
    BadFraction(f64),
    #[error("ramp breakpoints must be non-empty with non-decreasing times")]
    BadRamp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    #[default]
    #[serde(rename = "split8")]
    Split8,
    #[serde(rename = "split71")]
    Split71,
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitKind::Split8 => "split8",
            SplitKind::Split71 => "split71",
        })
    }
}

impl std::str::FromStr for SplitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "split8" | "split-8" => Ok(SplitKind::Split8),
            "split71" | "split-7.1" | "split7.1" => Ok(SplitKind::Split71),
            _ => Err(format!("unknown split `{s}` (expected split8 or split71)")),
        }
    }
}

/// Fronthaul rate range of a functional split, in Mb/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitProfile {
    pub kind: SplitKind,
    pub rate_min_mbps: u64,
    pub rate_max_mbps: u64,
}

impl SplitProfile {
    pub fn of(kind: SplitKind) -> Self {
        match kind {
            SplitKind::Split8 => SplitProfile {
                kind,
                rate_min_mbps: 153,
                rate_max_mbps: 2457,
            },
            SplitKind::Split71 => SplitProfile {
                kind,
                rate_min_mbps: 110,
                rate_max_mbps: 1058,
            },
        }
    }
}

/// Linear interpolation between the idle floor and the full-band rate.
pub fn fronthaul_rate(profile: &SplitProfile, load_fraction: f64) -> f64 {
    let f = load_fraction.clamp(0.0, 1.0);
    profile.rate_min_mbps as f64 + f * (profile.rate_max_mbps - profile.rate_min_mbps) as f64
}

/// Bytes of one TTI's payload with `active` sessions, computed exactly in
/// integers: ceil(rate * tti / 8).
pub fn payload_bytes(profile: &SplitProfile, active: u32, n_full: u32, tti_ns: Nanos) -> u64 {
    let n = n_full.max(1) as u128;
    let a = active.min(n_full) as u128;
    let span = (profile.rate_max_mbps - profile.rate_min_mbps) as u128;
    // rate [Mb/s] * n = min*n + a*span; bytes = rate * 1e6 * tti_ns / (8e9)
    let num = (profile.rate_min_mbps as u128 * n + a * span) * tti_ns as u128;
    let den = 8_000 * n;
    num.div_ceil(den) as u64
}

/// Offered load over time: a constant or a piecewise-linear ramp of
/// (seconds, Erlang) breakpoints, held flat outside the breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadSchedule {
    Constant(f64),
    Ramp(Vec<(f64, f64)>),
}

impl LoadSchedule {
    pub fn validate(&self) -> Result<(), TrafficError> {
        match self {
            LoadSchedule::Constant(e) => check_load(*e),
            LoadSchedule::Ramp(points) => {
                if points.is_empty() || points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(TrafficError::BadRamp);
                }
                points.iter().try_for_each(|(_, e)| check_load(*e))
            }
        }
    }

    pub fn erlang_at(&self, t_s: f64) -> f64 {
        match self {
            LoadSchedule::Constant(e) => *e,
            LoadSchedule::Ramp(points) => {
                let first = points[0];
                if t_s <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let ((t0, e0), (t1, e1)) = (w[0], w[1]);
                    if t_s <= t1 {
                        if t1 == t0 {
                            return e1;
                        }
                        return e0 + (e1 - e0) * (t_s - t0) / (t1 - t0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }
}

fn check_load(e: f64) -> Result<(), TrafficError> {
    if e.is_finite() && e >= 0.0 {
        Ok(())
    } else {
        Err(TrafficError::BadLoad(e))
    }
}

/// Session birth-death process of one cell. Time is kept in f64
/// nanoseconds internally so exponential draws are not quantised.
#[derive(Debug)]
pub struct CellLoadModel {
    erlang: f64,
    mean_holding_ns: f64,
    pub n_full: u32,
    departures: BinaryHeap<Reverse<u64>>,
    next_arrival: f64,
    arrivals: RngStream,
    holding: RngStream,
    now: f64,
}

impl CellLoadModel {
    /// Starts in the stationary regime: Poisson(E) sessions already active.
    pub fn new(
        name: &str,
        seed: u64,
        erlang: f64,
        mean_holding_s: f64,
        n_full: u32,
    ) -> Result<Self, TrafficError> {
        check_load(erlang)?;
        if !(mean_holding_s.is_finite() && mean_holding_s > 0.0) {
            return Err(TrafficError::BadHolding(mean_holding_s));
        }
        if n_full == 0 {
            return Err(TrafficError::BadNFull);
        }
        let mut init = rng_stream(&format!("sessions-init/{name}"), seed);
        let mut cell = CellLoadModel {
            erlang,
            mean_holding_ns: mean_holding_s * NS_PER_S as f64,
            n_full,
            departures: BinaryHeap::new(),
            next_arrival: f64::INFINITY,
            arrivals: rng_stream(&format!("arrivals/{name}"), seed),
            holding: rng_stream(&format!("holding/{name}"), seed),
            now: 0.0,
        };
        let n0 = if erlang > 0.0 {
            Poisson::new(erlang)
                .expect("positive mean")
                .sample(&mut init) as u64
        } else {
            0
        };
        for _ in 0..n0 {
            let h = cell.draw_holding();
            cell.departures.push(Reverse(h.to_bits()));
        }
        cell.next_arrival = cell.draw_interarrival();
        Ok(cell)
    }

    pub fn arrival_rate_per_s(&self) -> f64 {
        self.erlang / (self.mean_holding_ns / NS_PER_S as f64)
    }

    pub fn erlang(&self) -> f64 {
        self.erlang
    }

    pub fn active(&self) -> u32 {
        self.departures.len() as u32
    }

    pub fn load_fraction(&self) -> f64 {
        (self.active() as f64 / self.n_full as f64).min(1.0)
    }

    fn draw_holding(&mut self) -> f64 {
        let exp = Exp::new(1.0 / self.mean_holding_ns).expect("positive rate");
        self.now + exp.sample(&mut self.holding)
    }

    fn draw_interarrival(&mut self) -> f64 {
        if self.erlang <= 0.0 {
            return f64::INFINITY;
        }
        let rate = self.erlang / self.mean_holding_ns;
        self.now
            + Exp::new(rate)
                .expect("positive rate")
                .sample(&mut self.arrivals)
    }

    /// Changes the offered load from the current instant. The residual
    /// interarrival time is rescaled by old/new rate, which keeps the
    /// process Poisson with a piecewise-constant rate.
    pub fn set_erlang(&mut self, erlang: f64) -> Result<(), TrafficError> {
        check_load(erlang)?;
        if erlang == self.erlang {
            return Ok(());
        }
        let old = self.erlang;
        self.erlang = erlang;
        if erlang <= 0.0 {
            self.next_arrival = f64::INFINITY;
        } else if old <= 0.0 || !self.next_arrival.is_finite() {
            self.next_arrival = self.draw_interarrival();
        } else {
            let residual = self.next_arrival - self.now;
            self.next_arrival = self.now + residual * old / erlang;
        }
        Ok(())
    }

    /// Advances the process to `now` and returns the active session count.
    pub fn step_sessions(&mut self, now: Nanos) -> u32 {
        let t = now as f64;
        assert!(t >= self.now, "session clock moved backwards");
        loop {
            let dep = self
                .departures
                .peek()
                .map(|Reverse(b)| f64::from_bits(*b))
                .unwrap_or(f64::INFINITY);
            let next = dep.min(self.next_arrival);
            if next > t {
                break;
            }
            self.now = next;
            if dep <= self.next_arrival {
                self.departures.pop();
            } else {
                let h = self.draw_holding();
                self.departures.push(Reverse(h.to_bits()));
                self.next_arrival = self.draw_interarrival();
            }
        }
        self.now = t;
        self.active()
    }
}

/// Uniform RU processing delay in [0, max) ns.
#[derive(Debug)]
pub struct ProcessingDelay {
    max_ns: Nanos,
    rng: RngStream,
}

impl ProcessingDelay {
    pub fn new(name: &str, seed: u64, max_ns: Nanos) -> Self {
        ProcessingDelay {
            max_ns,
            rng: rng_stream(&format!("processing/{name}"), seed),
        }
    }

    pub fn sample(&mut self) -> Nanos {
        if self.max_ns == 0 {
            0
        } else {
            self.rng.random_range(0..self.max_ns)
        }
    }
}

/// One TTI's fronthaul payload of one RU, split into one message per
/// grant cycle. Message `j` becomes ready at
/// `t_generated + j * cycle + processing`.
#[derive(Debug, Clone, PartialEq)]
pub struct EcpriFrame {
    pub ru: u32,
    pub tti_index: u64,
    pub size: u64,
    pub t_generated: Nanos,
    pub processing_ns: Nanos,
}

impl EcpriFrame {
    pub fn t_ready(&self) -> Nanos {
        self.t_generated + self.processing_ns
    }
}

/// Message sizes of a payload spread over `parts` cycles: ceil(P/parts)
/// each, with the remainder in the last ones.
pub fn nominal_split(payload: u64, parts: u32, j: u32) -> u64 {
    let base = payload.div_ceil(parts.max(1) as u64);
    base.min(payload - payload.min(base * j as u64))
}

/// Per-RU generator tying a session process to payload sizing.
#[derive(Debug)]
pub struct RuTraffic {
    pub ru: u32,
    pub cell: CellLoadModel,
    pub processing: ProcessingDelay,
    pub profile: SplitProfile,
    pub tti_ns: Nanos,
}

impl RuTraffic {
    /// Builds the frame for TTI `tti_index` from the cell state sampled
    /// at `sample_at` (one TTI ahead, when scheduling info is sent).
    pub fn generate_tti_payload(&mut self, tti_index: u64, sample_at: Nanos) -> EcpriFrame {
        let active = self.cell.step_sessions(sample_at);
        let size = payload_bytes(&self.profile, active, self.cell.n_full, self.tti_ns);
        EcpriFrame {
            ru: self.ru,
            tti_index,
            size,
            t_generated: tti_index * self.tti_ns,
            processing_ns: self.processing.sample(),
        }
    }
}

/// Usable bytes per cycle after the residential reservation.
pub fn background_load(base_bytes: u64, fraction: f64) -> Result<u64, TrafficError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(TrafficError::BadFraction(fraction));
    }
    Ok(((base_bytes as f64) * (1.0 - fraction)).floor() as u64)
}

/// Constant load for one RU, overriding the shared schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuLoad {
    pub onu: String,
    pub erlang: f64,
}

/// Places the first 90 µs crossing of a 12-ONU edge slice near 10 Erlang.
fn d_n_full() -> u32 {
    58
}
fn d_holding() -> f64 {
    0.005
}
fn d_background() -> f64 {
    0.3
}
fn d_tti_us() -> u64 {
    1_000
}
fn d_cycle_us() -> u64 {
    125
}
fn d_grants() -> u32 {
    8
}
fn d_processing_us() -> u64 {
    125
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    #[serde(default)]
    pub split: SplitKind,
    #[serde(default = "d_n_full")]
    pub n_full: u32,
    #[serde(default = "d_holding")]
    pub mean_holding_s: f64,
    #[serde(default = "d_background")]
    pub background_fraction: f64,
    /// Constant load per RU. Exclusive with `ramp`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erlang: Option<f64>,
    /// Piecewise-linear load per RU as [seconds, erlang] pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp: Option<Vec<(f64, f64)>>,
    #[serde(default = "d_tti_us")]
    pub tti_us: u64,
    #[serde(default = "d_cycle_us")]
    pub cycle_us: u64,
    #[serde(default = "d_grants")]
    pub grants_per_tti: u32,
    #[serde(default = "d_processing_us")]
    pub processing_max_us: u64,
    /// Tables last so the serialised form stays valid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ru: Vec<RuLoad>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            split: SplitKind::Split8,
            n_full: d_n_full(),
            mean_holding_s: d_holding(),
            background_fraction: d_background(),
            erlang: Some(12.5),
            ramp: None,
            tti_us: d_tti_us(),
            cycle_us: d_cycle_us(),
            grants_per_tti: d_grants(),
            processing_max_us: d_processing_us(),
            ru: Vec::new(),
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), String> {
        match (&self.erlang, &self.ramp) {
            (Some(_), Some(_)) => {
                return Err("traffic: give either `erlang` or `ramp`, not both".into())
            }
            (None, None) => return Err("traffic: one of `erlang` or `ramp` is required".into()),
            _ => {}
        }
        self.shared_schedule()
            .validate()
            .map_err(|e| format!("traffic: {e}"))?;
        for r in &self.ru {
            check_load(r.erlang).map_err(|e| format!("traffic.ru `{}`: {e}", r.onu))?;
        }
        if !(self.mean_holding_s.is_finite() && self.mean_holding_s > 0.0) {
            return Err(format!(
                "traffic: {}",
                TrafficError::BadHolding(self.mean_holding_s)
            ));
        }
        if self.n_full == 0 {
            return Err(format!("traffic: {}", TrafficError::BadNFull));
        }
        if !(0.0..=1.0).contains(&self.background_fraction) {
            return Err(format!(
                "traffic: {}",
                TrafficError::BadFraction(self.background_fraction)
            ));
        }
        if self.grants_per_tti == 0 || self.cycle_us == 0 {
            return Err("traffic: cycle_us and grants_per_tti must be positive".into());
        }
        if self.cycle_us * self.grants_per_tti as u64 != self.tti_us {
            return Err(format!(
                "traffic: {} grant cycles of {} us must span the {} us TTI",
                self.grants_per_tti, self.cycle_us, self.tti_us
            ));
        }
        if self.processing_max_us > self.cycle_us {
            return Err("traffic: processing_max_us may not exceed cycle_us".into());
        }
        Ok(())
    }

    pub fn shared_schedule(&self) -> LoadSchedule {
        match (&self.erlang, &self.ramp) {
            (_, Some(r)) => LoadSchedule::Ramp(r.clone()),
            (Some(e), None) => LoadSchedule::Constant(*e),
            (None, None) => LoadSchedule::Constant(0.0),
        }
    }

    pub fn schedule_for(&self, onu: &str) -> LoadSchedule {
        match self.ru.iter().find(|r| r.onu == onu) {
            Some(r) => LoadSchedule::Constant(r.erlang),
            None => self.shared_schedule(),
        }
    }
}
