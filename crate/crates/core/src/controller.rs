//! vPON slice table and the offload policy that reshapes it: trigger on a
//! windowed latency level with cooldown, pick ONUs, and track each move
//! until the ONU has retuned to its new slice.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{ms_to_ns, us_to_ns, Nanos};
use crate::wavelength::{ChannelId, OltKind};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("slice `{0}` has no members to offload")]
    EmptySlice(String),
    #[error("OLT `{0}` is already active")]
    AlreadyActive(String),
    #[error("unknown slice `{0}`")]
    UnknownSlice(String),
    #[error("ONU `{0}` is listed in more than one slice")]
    DuplicateMember(String),
    #[error("dormant slice `{0}` must have no members")]
    DormantWithMembers(String),
    #[error("ONU {0} is not a member of the source slice")]
    NotMember(u32),
    #[error("ONU {0} is already being moved")]
    InFlight(u32),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    Unbalanced,
    Balanced,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Unbalanced => "unbalanced",
            PolicyKind::Balanced => "balanced",
        })
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "unbalanced" => Ok(PolicyKind::Unbalanced),
            "balanced" => Ok(PolicyKind::Balanced),
            _ => Err(format!(
                "unknown policy `{s}` (expected unbalanced or balanced)"
            )),
        }
    }
}

fn d_true() -> bool {
    true
}
fn d_threshold() -> f64 {
    100.0
}
fn d_trigger() -> f64 {
    0.9
}
fn d_window() -> f64 {
    100.0
}
fn d_cooldown() -> f64 {
    200.0
}
fn d_msg_proc() -> f64 {
    10.0
}
fn d_tick() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffloadPolicy {
    #[serde(default = "d_true")]
    pub enabled: bool,
    #[serde(default)]
    pub kind: PolicyKind,
    #[serde(default = "d_threshold")]
    pub threshold_us: f64,
    #[serde(default = "d_trigger")]
    pub trigger_fraction: f64,
    #[serde(default = "d_window")]
    pub window_ms: f64,
    #[serde(default = "d_cooldown")]
    pub cooldown_ms: f64,
    #[serde(default = "d_msg_proc")]
    pub msg_proc_us: f64,
    #[serde(default)]
    pub activation_delay_ms: f64,
    /// Interval between controller evaluations.
    #[serde(default = "d_tick")]
    pub tick_ms: f64,
}

impl Default for OffloadPolicy {
    fn default() -> Self {
        OffloadPolicy {
            enabled: true,
            kind: PolicyKind::Unbalanced,
            threshold_us: d_threshold(),
            trigger_fraction: d_trigger(),
            window_ms: d_window(),
            cooldown_ms: d_cooldown(),
            msg_proc_us: d_msg_proc(),
            activation_delay_ms: 0.0,
            tick_ms: d_tick(),
        }
    }
}

impl OffloadPolicy {
    pub fn trigger_us(&self) -> f64 {
        self.threshold_us * self.trigger_fraction
    }

    pub fn window_ns(&self) -> Nanos {
        ms_to_ns(self.window_ms)
    }

    pub fn cooldown_ns(&self) -> Nanos {
        ms_to_ns(self.cooldown_ms)
    }

    pub fn msg_proc_ns(&self) -> Nanos {
        us_to_ns(self.msg_proc_us)
    }

    pub fn tick_ns(&self) -> Nanos {
        ms_to_ns(self.tick_ms)
    }

    pub fn activation_delay_ns(&self) -> Nanos {
        ms_to_ns(self.activation_delay_ms)
    }

    pub fn validate(&self) -> Result<(), String> {
        let pos = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(format!("policy.{what} must be positive, got {v}"))
            }
        };
        pos(self.threshold_us, "threshold_us")?;
        pos(self.window_ms, "window_ms")?;
        pos(self.tick_ms, "tick_ms")?;
        if !(self.trigger_fraction > 0.0 && self.trigger_fraction <= 1.0) {
            return Err(format!(
                "policy.trigger_fraction must lie in (0, 1], got {}",
                self.trigger_fraction
            ));
        }
        for (v, what) in [
            (self.cooldown_ms, "cooldown_ms"),
            (self.msg_proc_us, "msg_proc_us"),
            (self.activation_delay_ms, "activation_delay_ms"),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("policy.{what} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliceState {
    #[default]
    Active,
    Dormant,
}

pub type SliceId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    /// Node id of the serving OLT (the CO or an edge OLT site).
    pub olt: String,
    pub channel: ChannelId,
    #[serde(default)]
    pub state: SliceState,
    /// C-RAN ONUs, each with a tunable transceiver.
    #[serde(default)]
    pub members: Vec<String>,
    /// Residential ONUs pinned to this slice. They carry no simulated
    /// fronthaul traffic.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub residential: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VPonSlice {
    pub name: String,
    pub olt: String,
    pub kind: OltKind,
    pub channel: ChannelId,
    /// C-RAN ONUs, which the controller may move.
    pub members: BTreeSet<u32>,
    /// Residential ONUs pinned to this slice.
    pub pinned: BTreeSet<u32>,
    pub state: SliceState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconfigPlan {
    pub onus_to_move: Vec<u32>,
    pub from_slice: SliceId,
    pub to_slice: SliceId,
    pub issue_time: Nanos,
    pub completions: BTreeMap<u32, Option<Nanos>>,
    pub trigger_mean_us: f64,
}

#[derive(Debug, Clone)]
pub struct SliceController {
    pub policy: OffloadPolicy,
    slices: Vec<VPonSlice>,
    last_reconfig: Vec<Option<Nanos>>,
    plans: Vec<ReconfigPlan>,
    in_flight: BTreeMap<u32, usize>,
}

impl SliceController {
    pub fn init_slices(
        policy: OffloadPolicy,
        slices: Vec<VPonSlice>,
    ) -> Result<Self, ControllerError> {
        let mut seen = BTreeSet::new();
        for s in &slices {
            if s.state == SliceState::Dormant && !(s.members.is_empty() && s.pinned.is_empty()) {
                return Err(ControllerError::DormantWithMembers(s.name.clone()));
            }
            for m in s.members.iter().chain(&s.pinned) {
                if !seen.insert(*m) {
                    return Err(ControllerError::DuplicateMember(m.to_string()));
                }
            }
        }
        Ok(SliceController {
            policy,
            last_reconfig: vec![None; slices.len()],
            slices,
            plans: Vec::new(),
            in_flight: BTreeMap::new(),
        })
    }

    pub fn slices(&self) -> &[VPonSlice] {
        &self.slices
    }

    pub fn slice(&self, id: SliceId) -> &VPonSlice {
        &self.slices[id]
    }

    pub fn slice_by_name(&self, name: &str) -> Result<SliceId, ControllerError> {
        self.slices
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| ControllerError::UnknownSlice(name.to_owned()))
    }

    pub fn plans(&self) -> &[ReconfigPlan] {
        &self.plans
    }

    pub fn plan(&self, id: usize) -> &ReconfigPlan {
        &self.plans[id]
    }

    pub fn in_flight(&self, onu: u32) -> Option<usize> {
        self.in_flight.get(&onu).copied()
    }

    /// Slice currently serving `onu`, if it is not mid-move.
    pub fn slice_of(&self, onu: u32) -> Option<SliceId> {
        self.slices
            .iter()
            .position(|s| s.members.contains(&onu) || s.pinned.contains(&onu))
    }

    pub fn activate_edge_olt(&mut self, id: SliceId) -> Result<(), ControllerError> {
        let s = &mut self.slices[id];
        if s.state == SliceState::Active {
            return Err(ControllerError::AlreadyActive(s.olt.clone()));
        }
        s.state = SliceState::Active;
        Ok(())
    }

    fn has_headroom(&self, id: SliceId, mean_of: &dyn Fn(SliceId) -> Option<f64>) -> bool {
        match self.slices[id].state {
            SliceState::Dormant => true,
            SliceState::Active => mean_of(id).is_none_or(|m| m < self.policy.trigger_us()),
        }
    }

    /// Decides whether `from` should shed ONUs now and, if so, to which
    /// slice. Active targets with headroom are preferred over waking a
    /// dormant OLT; among them the lowest windowed mean wins.
    pub fn should_offload(
        &self,
        from: SliceId,
        now: Nanos,
        mean_of: &dyn Fn(SliceId) -> Option<f64>,
        reachable: &dyn Fn(SliceId) -> bool,
    ) -> Option<SliceId> {
        if !self.policy.enabled {
            return None;
        }
        let s = &self.slices[from];
        if s.state != SliceState::Active || s.kind != OltKind::Edge || s.members.is_empty() {
            return None;
        }
        let mean = mean_of(from)?;
        if mean < self.policy.trigger_us() {
            return None;
        }
        if self.last_reconfig[from].is_some_and(|t| now < t + self.policy.cooldown_ns()) {
            return None;
        }
        let candidates = (0..self.slices.len()).filter(|&t| {
            t != from
                && self.slices[t].kind == OltKind::Edge
                && self.has_headroom(t, mean_of)
                && reachable(t)
        });
        let mut best: Option<(bool, f64, SliceId)> = None;
        for t in candidates {
            let dormant = self.slices[t].state == SliceState::Dormant;
            let m = if dormant {
                0.0
            } else {
                mean_of(t).unwrap_or(0.0)
            };
            let key = (dormant, m, t);
            if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
        }
        best.map(|b| b.2)
    }

    /// ONUs to move, by windowed offered load (ties to the lowest id).
    pub fn select_onus(
        &self,
        from: SliceId,
        load_of: &dyn Fn(u32) -> u64,
    ) -> Result<Vec<u32>, ControllerError> {
        let s = &self.slices[from];
        if s.members.is_empty() {
            return Err(ControllerError::EmptySlice(s.name.clone()));
        }
        let mut ranked: Vec<(u64, u32)> = s.members.iter().map(|m| (load_of(*m), *m)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(match self.policy.kind {
            PolicyKind::Unbalanced => vec![ranked[0].1],
            PolicyKind::Balanced => ranked.iter().step_by(2).map(|(_, m)| *m).collect(),
        })
    }

    /// Opens a move: the ONUs leave the source slice at once and stay in
    /// the plan until their tunable transceiver settles on the target.
    pub fn issue_plan(
        &mut self,
        from: SliceId,
        to: SliceId,
        onus: Vec<u32>,
        now: Nanos,
        trigger_mean_us: f64,
    ) -> Result<usize, ControllerError> {
        for o in &onus {
            if self.in_flight.contains_key(o) {
                return Err(ControllerError::InFlight(*o));
            }
            if !self.slices[from].members.contains(o) {
                return Err(ControllerError::NotMember(*o));
            }
        }
        let id = self.plans.len();
        for o in &onus {
            self.slices[from].members.remove(o);
            self.in_flight.insert(*o, id);
        }
        self.last_reconfig[from] = Some(now);
        self.last_reconfig[to] = Some(now);
        self.plans.push(ReconfigPlan {
            completions: onus.iter().map(|o| (*o, None)).collect(),
            onus_to_move: onus,
            from_slice: from,
            to_slice: to,
            issue_time: now,
            trigger_mean_us,
        });
        Ok(id)
    }

    /// Closes one ONU's move and returns the slice it joined.
    pub fn complete_move(&mut self, onu: u32, now: Nanos) -> Result<SliceId, ControllerError> {
        let id = self
            .in_flight
            .remove(&onu)
            .ok_or(ControllerError::NotMember(onu))?;
        let plan = &mut self.plans[id];
        plan.completions.insert(onu, Some(now));
        let to = plan.to_slice;
        self.slices[to].members.insert(onu);
        Ok(to)
    }

    /// Every C-RAN ONU sits in exactly one slice or exactly one open plan.
    pub fn check_partition(&self, cran: &[u32]) -> Result<(), String> {
        for &o in cran {
            let in_slices = self
                .slices
                .iter()
                .filter(|s| s.members.contains(&o))
                .count();
            let moving = self.in_flight.contains_key(&o) as usize;
            if in_slices + moving != 1 {
                return Err(format!(
                    "ONU {o} in {in_slices} slices and {moving} open plans"
                ));
            }
        }
        if self
            .slices
            .iter()
            .any(|s| s.state == SliceState::Dormant && !s.members.is_empty())
        {
            return Err("dormant slice with members".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(name: &str, ch: u16, members: &[u32], state: SliceState) -> VPonSlice {
        VPonSlice {
            name: name.into(),
            olt: name.into(),
            kind: OltKind::Edge,
            channel: ChannelId(ch),
            members: members.iter().copied().collect(),
            pinned: BTreeSet::new(),
            state,
        }
    }

    fn ctl(kind: PolicyKind) -> SliceController {
        let policy = OffloadPolicy {
            kind,
            ..OffloadPolicy::default()
        };
        SliceController::init_slices(
            policy,
            vec![
                slice("olt1", 5, &(1..=12).collect::<Vec<_>>(), SliceState::Active),
                slice("olt2", 6, &[], SliceState::Dormant),
            ],
        )
        .unwrap()
    }

    #[test]
    fn trigger_rules() {
        let c = ctl(PolicyKind::Unbalanced);
        let yes = |_: SliceId| true;
        let m92 = |s: SliceId| if s == 0 { Some(92.0) } else { None };
        let m80 = |s: SliceId| if s == 0 { Some(80.0) } else { None };
        assert_eq!(c.should_offload(0, 1_000, &m92, &yes), Some(1));
        assert_eq!(c.should_offload(0, 1_000, &m80, &yes), None);
        assert_eq!(c.should_offload(0, 1_000, &m92, &|_| false), None);
        let mut c2 = c.clone();
        c2.issue_plan(0, 1, vec![1], 1_000, 92.0).unwrap();
        assert_eq!(c2.should_offload(0, 100_000_000, &m92, &yes), None);
        assert_eq!(c2.should_offload(0, 200_001_000, &m92, &yes), Some(1));
    }

    #[test]
    fn busy_target_without_headroom() {
        let mut c = ctl(PolicyKind::Unbalanced);
        c.activate_edge_olt(1).unwrap();
        let both = |_: SliceId| Some(95.0);
        assert_eq!(c.should_offload(0, 1_000, &both, &|_| true), None);
        assert_eq!(
            c.activate_edge_olt(1),
            Err(ControllerError::AlreadyActive("olt2".into()))
        );
    }

    #[test]
    fn selection_rules() {
        let c = ctl(PolicyKind::Unbalanced);
        assert_eq!(c.select_onus(0, &|_| 7).unwrap(), vec![1]);
        let loads = |o: u32| match o {
            1 => 5,
            2 => 10,
            3 => 7,
            _ => 0,
        };
        assert_eq!(c.select_onus(0, &loads).unwrap(), vec![2]);
        let b = ctl(PolicyKind::Balanced);
        assert_eq!(b.select_onus(0, &|_| 7).unwrap(), vec![1, 3, 5, 7, 9, 11]);
        assert!(matches!(
            b.select_onus(1, &|_| 0),
            Err(ControllerError::EmptySlice(_))
        ));
    }

    #[test]
    fn move_lifecycle_keeps_partition() {
        let mut c = ctl(PolicyKind::Balanced);
        let cran: Vec<u32> = (1..=12).collect();
        c.activate_edge_olt(1).unwrap();
        let p = c.issue_plan(0, 1, vec![1, 3], 10, 95.0).unwrap();
        c.check_partition(&cran).unwrap();
        assert_eq!(c.in_flight(1), Some(p));
        assert_eq!(c.slice_of(1), None);
        assert_eq!(
            c.issue_plan(0, 1, vec![1], 20, 95.0),
            Err(ControllerError::InFlight(1))
        );
        assert_eq!(c.complete_move(1, 30).unwrap(), 1);
        c.check_partition(&cran).unwrap();
        c.complete_move(3, 40).unwrap();
        assert_eq!(c.slice(1).members.len(), 2);
        assert_eq!(c.plan(p).completions[&3], Some(40));
    }

    #[test]
    fn disabled_policy_never_fires() {
        let mut c = ctl(PolicyKind::Unbalanced);
        c.policy.enabled = false;
        assert_eq!(c.should_offload(0, 0, &|_| Some(500.0), &|_| true), None);
    }

    #[test]
    fn init_rejects_bad_tables() {
        let bad = SliceController::init_slices(
            OffloadPolicy::default(),
            vec![
                slice("a", 5, &[1], SliceState::Active),
                slice("b", 6, &[1], SliceState::Active),
            ],
        );
        assert!(matches!(bad, Err(ControllerError::DuplicateMember(_))));
        let bad = SliceController::init_slices(
            OffloadPolicy::default(),
            vec![slice("b", 6, &[1], SliceState::Dormant)],
        );
        assert!(matches!(bad, Err(ControllerError::DormantWithMembers(_))));
    }
}
