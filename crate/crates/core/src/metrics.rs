//! Latency samples, per-OLT trailing-window means, summaries with exact
//! quantiles, and CSV export.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sim::{Nanos, NS_PER_US};

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Write the per-message sample file. Off keeps sweeps small.
    #[serde(default = "d_true")]
    pub export_samples: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            export_samples: true,
        }
    }
}

/// One delivered message. Latency is kept in integer nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencySample {
    pub t: Nanos,
    pub latency_ns: u32,
    pub olt: u16,
    pub onu: u16,
}

impl LatencySample {
    pub fn latency_us(&self) -> f64 {
        self.latency_ns as f64 / NS_PER_US as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub count: u64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Filter {
    pub olt: Option<u16>,
    pub onu: Option<u16>,
    /// Inclusive lower, exclusive upper bound on delivery time.
    pub from: Option<Nanos>,
    pub to: Option<Nanos>,
}

impl Filter {
    fn accepts(&self, s: &LatencySample) -> bool {
        self.olt.is_none_or(|o| o == s.olt)
            && self.onu.is_none_or(|o| o == s.onu)
            && self.from.is_none_or(|f| s.t >= f)
            && self.to.is_none_or(|t| s.t < t)
    }
}

/// Nearest-rank quantile of sorted values.
fn nearest_rank(sorted: &[u32], q: f64) -> u32 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn summarize_values(values: &mut [u32]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    values.sort_unstable();
    let sum: u128 = values.iter().map(|v| *v as u128).sum();
    let us = |ns: u32| ns as f64 / NS_PER_US as f64;
    Some(SummaryStats {
        count: values.len() as u64,
        mean_us: sum as f64 / values.len() as f64 / NS_PER_US as f64,
        p50_us: us(nearest_rank(values, 0.5)),
        p99_us: us(nearest_rank(values, 0.99)),
        max_us: us(*values.last().expect("non-empty")),
    })
}

/// Trailing window over [now - width, now], with an incremental sum.
#[derive(Debug, Clone)]
pub struct WindowedMean {
    width: Nanos,
    ring: VecDeque<(Nanos, u32)>,
    sum_ns: u128,
    last: Option<f64>,
}

impl WindowedMean {
    pub fn new(width: Nanos) -> Self {
        WindowedMean {
            width,
            ring: VecDeque::new(),
            sum_ns: 0,
            last: None,
        }
    }

    pub fn push(&mut self, t: Nanos, latency_ns: u32) {
        self.ring.push_back((t, latency_ns));
        self.sum_ns += latency_ns as u128;
    }

    /// Mean in microseconds at `now`. An empty window keeps the previous
    /// value.
    pub fn mean_at(&mut self, now: Nanos) -> Option<f64> {
        let lo = now.saturating_sub(self.width);
        while let Some(&(t, v)) = self.ring.front() {
            if t < lo {
                self.ring.pop_front();
                self.sum_ns -= v as u128;
            } else {
                break;
            }
        }
        // Samples are pushed at delivery, so none lie beyond `now`.
        if !self.ring.is_empty() {
            let m = self.sum_ns as f64 / self.ring.len() as f64 / NS_PER_US as f64;
            self.last = Some(m);
        }
        self.last
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub t: Nanos,
    pub olt: u16,
    pub mean_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlEventRecord {
    pub t: Nanos,
    pub action: String,
    pub onus: Vec<String>,
    pub from_slice: String,
    pub to_slice: String,
}

#[derive(Debug, Clone)]
pub struct Metrics {
    samples: Vec<LatencySample>,
    windows: Vec<WindowedMean>,
    pub window_log: Vec<WindowRecord>,
    pub events: Vec<ControlEventRecord>,
    pub undelivered: u64,
    olt_names: Vec<String>,
    onu_names: Vec<String>,
}

impl Metrics {
    pub fn new(window: Nanos, olt_names: Vec<String>, onu_names: Vec<String>) -> Self {
        Metrics {
            samples: Vec::new(),
            windows: vec![WindowedMean::new(window); olt_names.len()],
            window_log: Vec::new(),
            events: Vec::new(),
            undelivered: 0,
            olt_names,
            onu_names,
        }
    }

    pub fn reserve(&mut self, n: usize) {
        self.samples.reserve(n);
    }

    /// Records a delivered message. A latency below the path's propagation
    /// delay means a timing bug upstream.
    pub fn record_sample(&mut self, sample: LatencySample, propagation_ns: Nanos) {
        assert!(
            sample.latency_ns as Nanos >= propagation_ns,
            "latency {} ns below propagation {} ns at t={}",
            sample.latency_ns,
            propagation_ns,
            sample.t
        );
        self.windows[sample.olt as usize].push(sample.t, sample.latency_ns);
        self.samples.push(sample);
    }

    pub fn samples(&self) -> &[LatencySample] {
        &self.samples
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn window_mean(&mut self, olt: u16, now: Nanos) -> Option<f64> {
        self.windows[olt as usize].mean_at(now)
    }

    /// Takes the window mean at `now` and appends it to the window log.
    pub fn log_window(&mut self, olt: u16, now: Nanos) -> Option<f64> {
        let m = self.window_mean(olt, now);
        if let Some(mean_us) = m {
            self.window_log.push(WindowRecord {
                t: now,
                olt,
                mean_us,
            });
        }
        m
    }

    pub fn summarize(&self, filter: &Filter) -> Option<SummaryStats> {
        let mut v: Vec<u32> = self
            .samples
            .iter()
            .filter(|s| filter.accepts(s))
            .map(|s| s.latency_ns)
            .collect();
        summarize_values(&mut v)
    }

    pub fn olt_name(&self, olt: u16) -> &str {
        &self.olt_names[olt as usize]
    }

    pub fn onu_name(&self, onu: u16) -> &str {
        &self.onu_names[onu as usize]
    }

    pub fn olt_index(&self, name: &str) -> Option<u16> {
        self.olt_names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u16)
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 32 + 64);
        out.push_str("t_ns,olt,onu,latency_us\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.t,
                self.olt_names[s.olt as usize],
                self.onu_names[s.onu as usize],
                fmt_us(s.latency_ns as u64)
            );
        }
        let _ = writeln!(out, "# undelivered={}", self.undelivered);
        out
    }

    pub fn windows_csv(&self) -> String {
        let mut out = String::from("t_ns,olt,window_mean_us\n");
        for w in &self.window_log {
            let _ = writeln!(
                out,
                "{},{},{:.3}",
                w.t, self.olt_names[w.olt as usize], w.mean_us
            );
        }
        out
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("t_ns,action,onus,from_slice,to_slice\n");
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.t,
                e.action,
                e.onus.join(";"),
                e.from_slice,
                e.to_slice
            );
        }
        out
    }

    /// Writes the three CSV files into `dir` and returns the number of
    /// sample rows.
    pub fn export_timeseries(&self, dir: &Path, with_samples: bool) -> io::Result<usize> {
        fs::create_dir_all(dir)?;
        if with_samples {
            fs::write(dir.join("samples.csv"), self.samples_csv())?;
        }
        fs::write(dir.join("windows.csv"), self.windows_csv())?;
        fs::write(dir.join("events.csv"), self.events_csv())?;
        Ok(self.samples.len())
    }
}

/// Integer nanoseconds as microseconds with three decimals, exactly.
pub fn fmt_us(ns: u64) -> String {
    format!("{}.{:03}", ns / NS_PER_US, ns % NS_PER_US)
}
