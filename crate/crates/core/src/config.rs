//! Scenario files, command-line overrides, and the built-in presets.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{OffloadPolicy, PolicyKind, SliceConfig, SliceState};
use crate::metrics::MetricsConfig;
use crate::topology::{
    EastWestMode, NodeConfig, NodeRole, RuleConfig, TopologyConfig, XlinkConfig,
};
use crate::traffic::{SplitKind, TrafficConfig};
use crate::wavelength::{ChannelId, WavelengthConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("--slice-size only applies to the fig2 presets")]
    SliceSizeNotApplicable,
}

fn d_duration() -> f64 {
    32.0
}
fn d_warmup() -> f64 {
    2.0
}
fn d_seed() -> u64 {
    1
}
fn d_drain() -> f64 {
    0.5
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_duration")]
    pub duration_s: f64,
    /// Samples delivered before this time are left out of summaries.
    #[serde(default = "d_warmup")]
    pub warmup_s: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Time after traffic stops for queues to empty.
    #[serde(default = "d_drain")]
    pub drain_s: f64,
    /// Check scheduler and slice invariants while running.
    #[serde(default = "d_true")]
    pub audit: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            duration_s: d_duration(),
            warmup_s: d_warmup(),
            seed: d_seed(),
            drain_s: d_drain(),
            audit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub run: RunConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub wavelengths: WavelengthConfig,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub policy: OffloadPolicy,
    pub slices: Vec<SliceConfig>,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let r = &self.run;
        if !(r.duration_s.is_finite() && r.duration_s > 0.0) {
            return Err(ConfigError::Invalid(
                "run.duration_s must be positive".into(),
            ));
        }
        if !(r.warmup_s >= 0.0 && r.warmup_s < r.duration_s) {
            return Err(ConfigError::Invalid(format!(
                "run.warmup_s ({}) must be non-negative and below duration_s ({})",
                r.warmup_s, r.duration_s
            )));
        }
        if !(r.drain_s.is_finite() && r.drain_s >= 0.0) {
            return Err(ConfigError::Invalid(
                "run.drain_s must be non-negative".into(),
            ));
        }
        self.traffic.validate().map_err(ConfigError::Invalid)?;
        self.policy.validate().map_err(ConfigError::Invalid)?;
        if !(self.wavelengths.tuning_time_ms.is_finite() && self.wavelengths.tuning_time_ms >= 0.0)
        {
            return Err(ConfigError::Invalid(
                "wavelengths.tuning_time_ms must be non-negative".into(),
            ));
        }
        if self.slices.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one slice is required".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.slices {
            if !seen.insert(&s.olt) {
                return Err(ConfigError::Invalid(format!(
                    "OLT `{}` serves more than one slice",
                    s.olt
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }
}

/// Parses scenario text. Unknown keys and type errors are reported with
/// their line and column.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_owned(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text, &path.display().to_string())
}

/// Command-line adjustments applied before a preset is expanded.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_size: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub erlang: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub east_west_mode: Option<EastWestMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitKind>,
}

impl Overrides {
    fn apply_common(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(d) = self.duration_s {
            cfg.run.duration_s = d;
            if cfg.run.warmup_s >= d {
                cfg.run.warmup_s = 0.0;
            }
        }
        if let Some(p) = self.policy {
            cfg.policy.kind = p;
        }
        if let Some(e) = self.erlang {
            cfg.traffic.erlang = Some(e);
            cfg.traffic.ramp = None;
        }
        if let Some(m) = self.east_west_mode {
            cfg.topology.east_west_mode = m;
        }
        if let Some(s) = self.split {
            cfg.traffic.split = s;
        }
    }
}

/// Sweepable parameters and their override setters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    SliceSize,
    Erlang,
    EastWestMode,
    Split,
    Policy,
    Duration,
    Seed,
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "slice-size" => SweepParam::SliceSize,
            "erlang" => SweepParam::Erlang,
            "east-west-mode" => SweepParam::EastWestMode,
            "split" => SweepParam::Split,
            "policy" => SweepParam::Policy,
            "duration" => SweepParam::Duration,
            "seed" => SweepParam::Seed,
            _ => {
                return Err(format!(
                    "unknown sweep parameter `{s}` (expected slice-size, erlang, east-west-mode, split, policy, duration or seed)"
                ))
            }
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::SliceSize => "slice-size",
            SweepParam::Erlang => "erlang",
            SweepParam::EastWestMode => "east-west-mode",
            SweepParam::Split => "split",
            SweepParam::Policy => "policy",
            SweepParam::Duration => "duration",
            SweepParam::Seed => "seed",
        })
    }
}

impl SweepParam {
    /// Sets the parameter on `ov` from its textual value.
    pub fn apply(&self, ov: &mut Overrides, value: &str) -> Result<(), String> {
        let bad = |e: String| format!("bad value `{value}` for {self}: {e}");
        match self {
            SweepParam::SliceSize => {
                ov.slice_size = Some(
                    value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                )
            }
            SweepParam::Erlang => {
                ov.erlang = Some(
                    value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                )
            }
            SweepParam::EastWestMode => ov.east_west_mode = Some(parse_mode(value).map_err(bad)?),
            SweepParam::Split => ov.split = Some(value.parse().map_err(bad)?),
            SweepParam::Policy => ov.policy = Some(value.parse().map_err(bad)?),
            SweepParam::Duration => {
                ov.duration_s = Some(
                    value
                        .parse()
                        .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                )
            }
            SweepParam::Seed => {
                ov.seed = Some(
                    value
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                )
            }
        }
        Ok(())
    }
}

pub fn parse_mode(s: &str) -> Result<EastWestMode, String> {
    match s {
        "direct" => Ok(EastWestMode::Direct),
        "overlay" => Ok(EastWestMode::Overlay),
        _ => Err(format!(
            "unknown east-west mode `{s}` (expected direct or overlay)"
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Edge slice: ONUs of tree A served by OLT1 in the same tree.
    Fig2Edge,
    /// The same ONUs served by the CO over the feeder.
    Fig2Co,
    /// ONUs of tree A served by OLT2 in tree B over the cross-link.
    Fig2EastWest,
    /// Load ramp with threshold-triggered offloading.
    Fig3,
    /// The fig3 ramp with the balanced policy.
    Fig4,
}

impl Preset {
    pub const ALL: [(&'static str, Preset); 6] = [
        ("fig2", Preset::Fig2Edge),
        ("fig2-edge", Preset::Fig2Edge),
        ("fig2-co", Preset::Fig2Co),
        ("fig2-ew", Preset::Fig2EastWest),
        ("fig3", Preset::Fig3),
        ("fig4", Preset::Fig4),
    ];

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.iter().find(|(n, _)| *n == name).map(|(_, p)| *p)
    }

    fn is_fig2(self) -> bool {
        matches!(
            self,
            Preset::Fig2Edge | Preset::Fig2Co | Preset::Fig2EastWest
        )
    }

    /// Expands the preset with `ov` folded in.
    pub fn expand(self, ov: &Overrides) -> Result<ScenarioConfig, ConfigError> {
        if ov.slice_size.is_some() && !self.is_fig2() {
            return Err(ConfigError::SliceSizeNotApplicable);
        }
        let mut cfg = match self {
            Preset::Fig2Edge | Preset::Fig2Co | Preset::Fig2EastWest => {
                fig2(self, ov.slice_size.unwrap_or(6))?
            }
            Preset::Fig3 => ramp_scenario(PolicyKind::Unbalanced),
            Preset::Fig4 => ramp_scenario(PolicyKind::Balanced),
        };
        ov.apply_common(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn node(id: &str, role: NodeRole, parent: Option<&str>) -> NodeConfig {
    NodeConfig {
        id: id.into(),
        role,
        parent: parent.map(str::to_owned),
        length_km: None,
    }
}

/// Two level-1 trees under one level-2 splitter, cross-linked. Tree A holds
/// OLT1 and `a_onus`; tree B holds OLT2 and `b_onus`.
fn two_trees(a_onus: &[String], b_onus: &[String]) -> TopologyConfig {
    let mut nodes = vec![
        node("co", NodeRole::Co, None),
        node("l2", NodeRole::Level2Splitter, Some("co")),
        node("l1-a", NodeRole::Level1Splitter, Some("l2")),
        node("l1-b", NodeRole::Level1Splitter, Some("l2")),
        node("olt1", NodeRole::EdgeOltSite, Some("l1-a")),
        node("olt2", NodeRole::EdgeOltSite, Some("l1-b")),
    ];
    nodes.extend(
        a_onus
            .iter()
            .map(|o| node(o, NodeRole::OnuSite, Some("l1-a"))),
    );
    nodes.extend(
        b_onus
            .iter()
            .map(|o| node(o, NodeRole::OnuSite, Some("l1-b"))),
    );
    let mut t = TopologyConfig::new(nodes);
    t.xlinks.push(XlinkConfig {
        a: "l1-a".into(),
        b: "l1-b".into(),
        length_km: None,
    });
    t.rules = ["l1-a", "l1-b"]
        .iter()
        .map(|s| RuleConfig {
            splitter: (*s).into(),
            reflect: vec![],
            xpass: vec![],
            trunkpass: vec![1, 2, 3, 4],
        })
        .collect();
    t
}

fn onu_names(prefix: &str, n: u32) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn fig2(p: Preset, k: u32) -> Result<ScenarioConfig, ConfigError> {
    if !(1..=64).contains(&k) {
        return Err(ConfigError::Invalid(format!(
            "slice size {k} outside 1..=64"
        )));
    }
    let onus = onu_names("onu", k);
    let slice = |olt: &str, ch: u16, members: Vec<String>| SliceConfig {
        olt: olt.into(),
        channel: ChannelId(ch),
        state: SliceState::Active,
        members,
        residential: vec![],
    };
    let slices = match p {
        Preset::Fig2Edge => vec![slice("olt1", 5, onus.clone())],
        Preset::Fig2Co => vec![slice("co", 2, onus.clone())],
        _ => vec![slice("olt2", 6, onus.clone())],
    };
    Ok(ScenarioConfig {
        run: RunConfig::default(),
        topology: two_trees(&onus, &[]),
        wavelengths: WavelengthConfig::default(),
        traffic: TrafficConfig {
            erlang: Some(12.5),
            ..TrafficConfig::default()
        },
        policy: OffloadPolicy {
            enabled: false,
            ..OffloadPolicy::default()
        },
        slices,
        metrics: MetricsConfig::default(),
    })
}

fn ramp_scenario(kind: PolicyKind) -> ScenarioConfig {
    let cran = onu_names("onu", 12);
    let res = onu_names("res", 12);
    ScenarioConfig {
        run: RunConfig {
            duration_s: 120.0,
            ..RunConfig::default()
        },
        topology: two_trees(&cran, &res),
        wavelengths: WavelengthConfig::default(),
        traffic: TrafficConfig {
            erlang: None,
            ramp: Some(vec![(0.0, 1.0), (120.0, 14.0)]),
            ..TrafficConfig::default()
        },
        policy: OffloadPolicy {
            kind,
            ..OffloadPolicy::default()
        },
        slices: vec![
            SliceConfig {
                olt: "olt1".into(),
                channel: ChannelId(5),
                state: SliceState::Active,
                members: cran,
                residential: vec![],
            },
            SliceConfig {
                olt: "olt2".into(),
                channel: ChannelId(6),
                state: SliceState::Dormant,
                members: vec![],
                residential: vec![],
            },
            SliceConfig {
                olt: "co".into(),
                channel: ChannelId(2),
                state: SliceState::Active,
                members: vec![],
                residential: res,
            },
        ],
        metrics: MetricsConfig::default(),
    }
}

/// Resolves a preset name or scenario file path and applies overrides.
pub fn load_scenario(source: &str, ov: &Overrides) -> Result<ScenarioConfig, ConfigError> {
    if let Some(p) = Preset::from_name(source) {
        return p.expand(ov);
    }
    if ov.slice_size.is_some() {
        return Err(ConfigError::SliceSizeNotApplicable);
    }
    let mut cfg = parse_scenario(Path::new(source))?;
    ov.apply_common(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
