//! Wavelength channel plan: which OLT owns which channel, per-channel rate
//! parameters, and the fixed/tunable transceiver pair of every ONU.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Nanos, NS_PER_S};

/// Wavelength channel index. `λ1` carries control, `λ2..λ4` are CO data
/// channels, `λ5` and up belong to edge OLTs. Upstream and downstream of a
/// channel are always handled as a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u16);

impl ChannelId {
    pub const CONTROL: ChannelId = ChannelId(1);

    pub fn role(self) -> ChannelRole {
        match self.0 {
            1 => ChannelRole::CoControl,
            2..=4 => ChannelRole::CoData,
            _ => ChannelRole::Edge,
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "λ{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    CoControl,
    CoData,
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OltKind {
    Co,
    Edge,
}

#[derive(Debug, Error, PartialEq)]
pub enum WavelengthError {
    #[error("channel index 0 is not a valid channel")]
    InvalidChannel,
    #[error("channel {0} is not declared in the wavelength plan")]
    UnknownChannel(ChannelId),
    #[error("{kind:?} OLT `{olt}` cannot operate on {channel} ({role:?})")]
    RoleMismatch {
        olt: String,
        kind: OltKind,
        channel: ChannelId,
        role: ChannelRole,
    },
    #[error("{channel} is already held by OLT `{holder}`")]
    ChannelConflict { channel: ChannelId, holder: String },
    #[error("ONU `{0}` has no tunable transceiver")]
    NotTunable(String),
    #[error("ONU `{0}` is already tuning")]
    TuningInProgress(String),
    #[error("unknown ONU `{0}`")]
    UnknownOnu(String),
    #[error("{n_bursts} bursts of {overhead_ns} ns overhead exceed a {cycle_ns} ns cycle")]
    OverheadExceedsCycle {
        n_bursts: u32,
        overhead_ns: Nanos,
        cycle_ns: Nanos,
    },
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
}

/// Rate parameters of one TDMA wavelength channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default = "default_line_rate")]
    pub line_rate_bps: u64,
    #[serde(default = "default_payload_rate")]
    pub payload_rate_bps: u64,
    #[serde(default = "default_overhead_ns")]
    pub burst_overhead_ns: Nanos,
}

fn default_line_rate() -> u64 {
    9_953_280_000
}

fn default_payload_rate() -> u64 {
    9_000_000_000
}

fn default_overhead_ns() -> Nanos {
    1_000
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            line_rate_bps: default_line_rate(),
            payload_rate_bps: default_payload_rate(),
            burst_overhead_ns: default_overhead_ns(),
        }
    }
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), WavelengthError> {
        if self.payload_rate_bps == 0 {
            return Err(WavelengthError::InvalidSpec(
                "payload rate must be positive".into(),
            ));
        }
        if self.payload_rate_bps > self.line_rate_bps {
            return Err(WavelengthError::InvalidSpec(format!(
                "payload rate {} exceeds line rate {}",
                self.payload_rate_bps, self.line_rate_bps
            )));
        }
        Ok(())
    }

    /// Bytes that fit in `ns` nanoseconds of payload time (floor).
    pub fn bytes_in(&self, ns: Nanos) -> u64 {
        ((u128::from(self.payload_rate_bps) * u128::from(ns)) / (8 * u128::from(NS_PER_S))) as u64
    }

    /// Serialization time of `bytes` (ceil to whole nanoseconds).
    pub fn serialization_ns(&self, bytes: u64) -> Nanos {
        let num = u128::from(bytes) * 8 * u128::from(NS_PER_S);
        num.div_ceil(u128::from(self.payload_rate_bps)) as Nanos
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub id: ChannelId,
    #[serde(default = "default_line_rate")]
    pub line_rate_bps: u64,
    #[serde(default = "default_payload_rate")]
    pub payload_rate_bps: u64,
    #[serde(default = "default_overhead_ns")]
    pub burst_overhead_ns: Nanos,
}

impl ChannelConfig {
    pub fn new(id: u16) -> Self {
        let d = ChannelSpec::default();
        ChannelConfig {
            id: ChannelId(id),
            line_rate_bps: d.line_rate_bps,
            payload_rate_bps: d.payload_rate_bps,
            burst_overhead_ns: d.burst_overhead_ns,
        }
    }

    pub fn spec(&self) -> ChannelSpec {
        ChannelSpec {
            line_rate_bps: self.line_rate_bps,
            payload_rate_bps: self.payload_rate_bps,
            burst_overhead_ns: self.burst_overhead_ns,
        }
    }
}

fn default_tuning_ms() -> f64 {
    1.0
}

fn default_channels() -> Vec<ChannelConfig> {
    (1..=6).map(ChannelConfig::new).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavelengthConfig {
    #[serde(default = "default_tuning_ms")]
    pub tuning_time_ms: f64,
    #[serde(default)]
    pub allow_channel_sharing: bool,
    #[serde(default = "default_channels")]
    pub channels: Vec<ChannelConfig>,
}

impl Default for WavelengthConfig {
    fn default() -> Self {
        WavelengthConfig {
            tuning_time_ms: default_tuning_ms(),
            allow_channel_sharing: false,
            channels: default_channels(),
        }
    }
}

/// Upstream payload bytes available in one cycle of `cycle_ns` that carries
/// `n_bursts` bursts: `rate × (cycle − n × overhead) / 8`, floored.
pub fn channel_capacity_per_cycle(
    spec: &ChannelSpec,
    cycle_ns: Nanos,
    n_bursts: u32,
) -> Result<u64, WavelengthError> {
    let overhead = u64::from(n_bursts) * spec.burst_overhead_ns;
    if overhead > cycle_ns {
        return Err(WavelengthError::OverheadExceedsCycle {
            n_bursts,
            overhead_ns: spec.burst_overhead_ns,
            cycle_ns,
        });
    }
    Ok(spec.bytes_in(cycle_ns - overhead))
}

/// Record of an accepted channel assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanUpdate {
    pub olt: String,
    pub channel: ChannelId,
    /// Set when the channel also carries control (λ1).
    pub control: bool,
    /// Channel the OLT released, for edge OLTs that moved.
    pub released: Option<ChannelId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransceiverKind {
    Fixed,
    Tunable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransceiverState {
    pub kind: TransceiverKind,
    pub current_channel: ChannelId,
    pub tuning_until: Option<Nanos>,
    pub tuning_target: Option<ChannelId>,
}

impl TransceiverState {
    fn new(kind: TransceiverKind, channel: ChannelId) -> Self {
        Self {
            kind,
            current_channel: channel,
            tuning_until: None,
            tuning_target: None,
        }
    }

    pub fn is_tuning(&self, now: Nanos) -> bool {
        self.tuning_until.is_some_and(|t| t > now)
    }
}

/// Transceiver pair of an ONU (or edge OLT): a fixed one for control and an
/// optional tunable one for the dynamic datapath.
#[derive(Debug, Clone, PartialEq)]
pub struct OnuTransceivers {
    pub fixed: TransceiverState,
    pub tunable: Option<TransceiverState>,
}

#[derive(Debug, Clone)]
pub struct WavelengthPlan {
    channels: BTreeMap<ChannelId, ChannelSpec>,
    holders: BTreeMap<ChannelId, Vec<String>>,
    olt_channels: BTreeMap<String, (OltKind, Vec<ChannelId>)>,
    transceivers: BTreeMap<String, OnuTransceivers>,
    allow_sharing: bool,
    tuning_ns: Nanos,
}

impl WavelengthPlan {
    pub fn new(tuning_ns: Nanos, allow_sharing: bool) -> Self {
        Self {
            channels: BTreeMap::new(),
            holders: BTreeMap::new(),
            olt_channels: BTreeMap::new(),
            transceivers: BTreeMap::new(),
            allow_sharing,
            tuning_ns,
        }
    }

    /// Declares a channel. λ1 is always present once any channel exists.
    pub fn add_channel(&mut self, id: ChannelId, spec: ChannelSpec) -> Result<(), WavelengthError> {
        if id.0 == 0 {
            return Err(WavelengthError::InvalidChannel);
        }
        spec.validate()?;
        self.channels.insert(id, spec);
        self.channels.entry(ChannelId::CONTROL).or_default();
        Ok(())
    }

    pub fn channel_spec(&self, id: ChannelId) -> Result<&ChannelSpec, WavelengthError> {
        self.channels
            .get(&id)
            .ok_or(WavelengthError::UnknownChannel(id))
    }

    pub fn channels(&self) -> impl Iterator<Item = (ChannelId, &ChannelSpec)> {
        self.channels.iter().map(|(k, v)| (*k, v))
    }

    pub fn tuning_ns(&self) -> Nanos {
        self.tuning_ns
    }

    /// Assigns `channel` to `olt`. Edge OLTs hold exactly one channel (a new
    /// assignment replaces the old one); the CO OLT may hold several.
    pub fn assign_channel(
        &mut self,
        olt: &str,
        kind: OltKind,
        channel: ChannelId,
    ) -> Result<PlanUpdate, WavelengthError> {
        if !self.channels.contains_key(&channel) {
            return Err(WavelengthError::UnknownChannel(channel));
        }
        let role = channel.role();
        let compatible = match kind {
            OltKind::Co => role != ChannelRole::Edge,
            OltKind::Edge => role == ChannelRole::Edge,
        };
        if !compatible {
            return Err(WavelengthError::RoleMismatch {
                olt: olt.to_owned(),
                kind,
                channel,
                role,
            });
        }
        if let Some(holder) = self
            .holders
            .get(&channel)
            .and_then(|h| h.iter().find(|name| name.as_str() != olt))
        {
            if !self.allow_sharing {
                return Err(WavelengthError::ChannelConflict {
                    channel,
                    holder: holder.clone(),
                });
            }
        }
        let entry = self
            .olt_channels
            .entry(olt.to_owned())
            .or_insert_with(|| (kind, Vec::new()));
        let mut released = None;
        if kind == OltKind::Edge {
            if let Some(old) = entry.1.pop() {
                if old != channel {
                    released = Some(old);
                }
            }
        }
        if !entry.1.contains(&channel) {
            entry.1.push(channel);
        }
        if let Some(old) = released {
            if let Some(h) = self.holders.get_mut(&old) {
                h.retain(|n| n != olt);
            }
        }
        let holders = self.holders.entry(channel).or_default();
        if !holders.iter().any(|n| n == olt) {
            holders.push(olt.to_owned());
        }
        Ok(PlanUpdate {
            olt: olt.to_owned(),
            channel,
            control: channel == ChannelId::CONTROL,
            released,
        })
    }

    pub fn olt_channels(&self, olt: &str) -> &[ChannelId] {
        self.olt_channels
            .get(olt)
            .map_or(&[], |(_, c)| c.as_slice())
    }

    /// Declares an ONU. `tunable_channel` is the initial datapath channel of
    /// its tunable transceiver, `None` for single-transceiver ONUs.
    pub fn add_onu(&mut self, onu: &str, fixed: ChannelId, tunable_channel: Option<ChannelId>) {
        self.transceivers.insert(
            onu.to_owned(),
            OnuTransceivers {
                fixed: TransceiverState::new(TransceiverKind::Fixed, fixed),
                tunable: tunable_channel
                    .map(|c| TransceiverState::new(TransceiverKind::Tunable, c)),
            },
        );
    }

    pub fn transceivers(&self, onu: &str) -> Option<&OnuTransceivers> {
        self.transceivers.get(onu)
    }

    /// Starts retuning the ONU's tunable transceiver. Returns the completion
    /// time; the transceiver is silent until then.
    pub fn tune_onu(
        &mut self,
        onu: &str,
        target: ChannelId,
        t_start: Nanos,
    ) -> Result<Nanos, WavelengthError> {
        if !self.channels.contains_key(&target) {
            return Err(WavelengthError::UnknownChannel(target));
        }
        let trx = self
            .transceivers
            .get_mut(onu)
            .ok_or_else(|| WavelengthError::UnknownOnu(onu.to_owned()))?;
        let tunable = trx
            .tunable
            .as_mut()
            .ok_or_else(|| WavelengthError::NotTunable(onu.to_owned()))?;
        if tunable.tuning_until.is_some() {
            return Err(WavelengthError::TuningInProgress(onu.to_owned()));
        }
        let done = t_start + self.tuning_ns;
        tunable.tuning_until = Some(done);
        tunable.tuning_target = Some(target);
        Ok(done)
    }

    /// Finishes a retune started with [`tune_onu`](Self::tune_onu).
    pub fn complete_tuning(&mut self, onu: &str, now: Nanos) -> Result<ChannelId, WavelengthError> {
        let trx = self
            .transceivers
            .get_mut(onu)
            .ok_or_else(|| WavelengthError::UnknownOnu(onu.to_owned()))?;
        let tunable = trx
            .tunable
            .as_mut()
            .ok_or_else(|| WavelengthError::NotTunable(onu.to_owned()))?;
        match (tunable.tuning_until, tunable.tuning_target) {
            (Some(until), Some(target)) if until <= now => {
                tunable.current_channel = target;
                tunable.tuning_until = None;
                tunable.tuning_target = None;
                Ok(target)
            }
            _ => Err(WavelengthError::TuningInProgress(onu.to_owned())),
        }
    }

    /// Whether the ONU can send datapath traffic on `channel` at `now`.
    pub fn can_transmit(&self, onu: &str, channel: ChannelId, now: Nanos) -> bool {
        match self.transceivers.get(onu) {
            Some(OnuTransceivers {
                tunable: Some(t), ..
            }) => t.current_channel == channel && !t.is_tuning(now) && t.tuning_until.is_none(),
            Some(OnuTransceivers {
                fixed,
                tunable: None,
            }) => fixed.current_channel == channel,
            None => false,
        }
    }
}
