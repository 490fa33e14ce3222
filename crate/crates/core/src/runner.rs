//! Scenario execution: builds the network, slices, and traffic from a
//! config, runs the event loop, and packages results.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{load_scenario, ConfigError, Overrides, ScenarioConfig, SweepParam};
use crate::controller::{ControllerError, SliceController, SliceId, SliceState, VPonSlice};
use crate::dba::{DbaParams, DbaScheduler, SchedInfo};
use crate::metrics::{ControlEventRecord, Filter, LatencySample, Metrics, SummaryStats};
use crate::sim::{ms_to_ns, secs_to_ns, Nanos, Scheduler, NS_PER_S, NS_PER_US};
use crate::topology::{NodeId, NodeRole, OdnTopology, TopologyError};
use crate::traffic::{
    nominal_split, CellLoadModel, LoadSchedule, ProcessingDelay, RuTraffic, SplitProfile,
    TrafficError,
};
use crate::wavelength::{ChannelId, OltKind, WavelengthError, WavelengthPlan};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("wavelength plan: {0}")]
    Wavelength(#[from] WavelengthError),
    #[error("slices: {0}")]
    Controller(#[from] ControllerError),
    #[error("traffic: {0}")]
    Traffic(#[from] TrafficError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("cannot write results to `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Tti(u64),
    Cycle {
        slice: u16,
        cycle: u64,
    },
    Burst {
        slice: u16,
        onu: u32,
        data_start: Nanos,
        bytes: u64,
    },
    Delivered {
        slice: u16,
        onu: u32,
        t_ready: Nanos,
        prop: Nanos,
    },
    ControlTick,
    Activate {
        plan: u32,
    },
    Ploam {
        plan: u32,
        onu: u32,
    },
    TuneDone {
        plan: u32,
        onu: u32,
    },
}

#[derive(Debug, Clone)]
struct Msg {
    ready: Nanos,
    left: u64,
}

struct Onu {
    name: String,
    node: NodeId,
    traffic: Option<(RuTraffic, LoadSchedule)>,
    queue: VecDeque<Msg>,
    serving: Option<SliceId>,
    path_prop: Nanos,
    control_delay: Nanos,
    held: Vec<SchedInfo>,
    offered: VecDeque<(Nanos, u64)>,
    last_ready_delivered: Option<Nanos>,
    enqueued: u64,
    delivered: u64,
}

impl Onu {
    fn backlog_before(&self, t: Nanos) -> u64 {
        self.queue
            .iter()
            .take_while(|m| m.ready < t)
            .map(|m| m.left)
            .sum()
    }
}

struct SliceRt {
    dba: DbaScheduler,
    site: NodeId,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct Diagnostics {
    pub events_executed: u64,
    pub messages_delivered: u64,
    pub undelivered: u64,
    pub late_sched_info: u64,
    pub off_channel_bursts: u64,
    pub unused_grant_bytes: u64,
    pub truncated_grant_bytes: u64,
    pub overhead_overflow_cycles: u64,
    pub reconfig_errors: u64,
    pub audit_violations: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub audit_messages: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One completed offload, as seen after the run.
#[derive(Debug, Clone, PartialEq)]
pub struct OffloadRecord {
    pub issue_time: Nanos,
    pub from: String,
    pub to: String,
    pub onus: Vec<String>,
    pub trigger_mean_us: f64,
    pub completed: Vec<Option<Nanos>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scope: String,
    pub stats: Option<SummaryStats>,
}

pub struct RunResult {
    pub config: ScenarioConfig,
    pub metrics: Metrics,
    pub diagnostics: Diagnostics,
    pub summary: Vec<SummaryRow>,
    pub offloads: Vec<OffloadRecord>,
    pub slice_names: Vec<String>,
    pub wall_time_s: f64,
    /// Bytes enqueued and delivered per ONU, by ONU name.
    pub conservation: Vec<(String, u64, u64)>,
}

impl RunResult {
    pub fn overall(&self) -> Option<SummaryStats> {
        self.summary.first().and_then(|r| r.stats)
    }

    pub fn slice_stats(&self, name: &str) -> Option<SummaryStats> {
        self.summary
            .iter()
            .find(|r| r.scope == name)
            .and_then(|r| r.stats)
    }

    pub fn slice_index(&self, name: &str) -> Option<u16> {
        self.slice_names
            .iter()
            .position(|n| n == name)
            .map(|i| i as u16)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("scope,count,mean_us,p50_us,p99_us,max_us\n");
        for r in &self.summary {
            match r.stats {
                Some(s) => out.push_str(&format!(
                    "{},{},{:.3},{:.3},{:.3},{:.3}\n",
                    r.scope, s.count, s.mean_us, s.p50_us, s.p99_us, s.max_us
                )),
                None => out.push_str(&format!("{},0,,,,\n", r.scope)),
            }
        }
        out
    }
}

struct World {
    cfg: ScenarioConfig,
    topo: OdnTopology,
    plan: WavelengthPlan,
    ctl: SliceController,
    slices: Vec<SliceRt>,
    onus: Vec<Onu>,
    cran: Vec<u32>,
    metrics: Metrics,
    diag: Diagnostics,
    tti_ns: Nanos,
    cycle_ns: Nanos,
    traffic_end: Nanos,
    t_end: Nanos,
    last_event: Nanos,
}

fn note(diag: &mut Diagnostics, msg: String) {
    diag.audit_violations += 1;
    if diag.audit_messages.len() < 20 {
        log::error!("audit: {msg}");
        diag.audit_messages.push(msg);
    }
}

impl World {
    fn build(cfg: ScenarioConfig) -> Result<Self, RunError> {
        cfg.validate()?;
        let topo = OdnTopology::build(&cfg.topology)?;
        let diag = Diagnostics {
            warnings: topo.warnings().to_vec(),
            ..Diagnostics::default()
        };

        let wl = &cfg.wavelengths;
        let mut plan = WavelengthPlan::new(ms_to_ns(wl.tuning_time_ms), wl.allow_channel_sharing);
        for c in &wl.channels {
            let spec = c.spec();
            spec.validate()?;
            plan.add_channel(c.id, spec)?;
        }

        let mut onu_index: BTreeMap<String, u32> = BTreeMap::new();
        let mut onus = Vec::new();
        for (id, n) in topo.nodes() {
            if n.role == NodeRole::OnuSite {
                onu_index.insert(n.name.clone(), onus.len() as u32);
                onus.push(Onu {
                    name: n.name.clone(),
                    node: id,
                    traffic: None,
                    queue: VecDeque::new(),
                    serving: None,
                    path_prop: 0,
                    control_delay: 0,
                    held: Vec::new(),
                    offered: VecDeque::new(),
                    last_ready_delivered: None,
                    enqueued: 0,
                    delivered: 0,
                });
            }
        }
        let lookup = |name: &str| {
            onu_index.get(name).copied().ok_or_else(|| {
                RunError::Scenario(format!("slice member `{name}` is not an ONU site"))
            })
        };

        let mut table = Vec::new();
        let mut cran = Vec::new();
        let mut sites = Vec::new();
        for s in &cfg.slices {
            let site = topo.node_id(&s.olt)?;
            let kind = match topo.role(site) {
                NodeRole::Co => OltKind::Co,
                NodeRole::EdgeOltSite => OltKind::Edge,
                r => {
                    return Err(RunError::Scenario(format!(
                        "slice OLT `{}` is a {r}, not an OLT",
                        s.olt
                    )))
                }
            };
            plan.assign_channel(&s.olt, kind, s.channel)?;
            let members = s
                .members
                .iter()
                .map(|m| lookup(m))
                .collect::<Result<_, _>>()?;
            let pinned = s
                .residential
                .iter()
                .map(|m| lookup(m))
                .collect::<Result<_, _>>()?;
            for m in &s.members {
                plan.add_onu(m, ChannelId::CONTROL, Some(s.channel));
                cran.push(lookup(m)?);
            }
            for m in &s.residential {
                plan.add_onu(m, s.channel, None);
            }
            table.push(VPonSlice {
                name: s.olt.clone(),
                olt: s.olt.clone(),
                kind,
                channel: s.channel,
                members,
                pinned,
                state: s.state,
            });
            sites.push(site);
        }
        cran.sort_unstable();
        let ctl = SliceController::init_slices(cfg.policy.clone(), table)?;

        let t = &cfg.traffic;
        let tti_ns = t.tti_us * NS_PER_US;
        let cycle_ns = t.cycle_us * NS_PER_US;
        let mut slices = Vec::new();
        for (i, s) in ctl.slices().iter().enumerate() {
            let params = DbaParams {
                cycle_ns,
                grants_per_tti: t.grants_per_tti,
                background_fraction: if s.kind == OltKind::Co {
                    t.background_fraction
                } else {
                    0.0
                },
            };
            let spec = *plan.channel_spec(s.channel)?;
            slices.push(SliceRt {
                dba: DbaScheduler::new(i as u32, s.channel, spec, params),
                site: sites[i],
            });
        }

        let names: Vec<String> = ctl.slices().iter().map(|s| s.name.clone()).collect();
        let onu_names: Vec<String> = onus.iter().map(|o| o.name.clone()).collect();
        let metrics = Metrics::new(cfg.policy.window_ns(), names, onu_names);

        let profile = SplitProfile::of(t.split);
        let seed = cfg.run.seed;
        for &o in &cran {
            let onu = &mut onus[o as usize];
            let schedule = t.schedule_for(&onu.name);
            let cell = CellLoadModel::new(
                &onu.name,
                seed,
                schedule.erlang_at(0.0),
                t.mean_holding_s,
                t.n_full,
            )?;
            let processing = ProcessingDelay::new(&onu.name, seed, t.processing_max_us * NS_PER_US);
            onu.traffic = Some((
                RuTraffic {
                    ru: o,
                    cell,
                    processing,
                    profile,
                    tti_ns,
                },
                schedule,
            ));
        }

        let co = topo.co();
        let mode = topo.mode();
        for onu in onus.iter_mut() {
            let p = topo.resolve_path(co, onu.node, ChannelId::CONTROL, mode)?;
            onu.control_delay = topo.propagation_delay(&p) + cfg.policy.msg_proc_ns();
        }
        let traffic_end = secs_to_ns(cfg.run.duration_s);
        let t_end = traffic_end + secs_to_ns(cfg.run.drain_s);

        let mut w = World {
            cfg,
            topo,
            plan,
            ctl,
            slices,
            onus,
            cran,
            metrics,
            diag,
            tti_ns,
            cycle_ns,
            traffic_end,
            t_end,
            last_event: 0,
        };
        for sid in 0..w.slices.len() {
            let s = w.ctl.slice(sid).clone();
            if s.state == SliceState::Active && s.kind == OltKind::Edge {
                w.install_activation_rules(sid)?;
            }
            for &m in &s.members {
                w.install_member_rules(sid, m)?;
            }
            for &m in &s.members {
                w.attach(sid, m)?;
                w.slices[sid].dba.add_member(m);
            }
        }
        Ok(w)
    }

    /// Home splitter rules for a freshly active edge OLT: loop its channel
    /// back into its own tree and let neighbours pass it over the xlinks.
    fn install_activation_rules(&mut self, sid: SliceId) -> Result<(), TopologyError> {
        let ch = self.ctl.slice(sid).channel;
        let site = self.slices[sid].site;
        let home = self
            .topo
            .home_splitter(site)
            .ok_or_else(|| TopologyError::BadEndpoint(self.topo.name(site).to_owned()))?;
        self.topo.update_rules(home, |r| {
            if !r.xpass.contains(&ch) {
                r.reflect.insert(ch);
            }
        })?;
        for n in self.topo.xlink_neighbors(home) {
            self.topo.update_rules(n, |r| {
                r.xpass.insert(ch);
            })?;
        }
        Ok(())
    }

    /// Rules that let `onu` reach the slice's OLT. Serving ONUs of another
    /// tree turns the OLT's home loopback into an xlink pass, so a slice
    /// cannot mix home-tree and east-west members.
    fn install_member_rules(&mut self, sid: SliceId, onu: u32) -> Result<(), TopologyError> {
        let s = self.ctl.slice(sid).clone();
        let ch = s.channel;
        let onu_node = self.onus[onu as usize].node;
        let onu_home = self
            .topo
            .home_splitter(onu_node)
            .ok_or_else(|| TopologyError::BadEndpoint(self.topo.name(onu_node).to_owned()))?;
        if s.kind == OltKind::Co {
            self.topo.update_rules(onu_home, |r| {
                r.trunkpass.insert(ch);
            })?;
            return Ok(());
        }
        let site = self.slices[sid].site;
        let olt_home = self
            .topo
            .home_splitter(site)
            .ok_or_else(|| TopologyError::BadEndpoint(self.topo.name(site).to_owned()))?;
        let conflict = |first| TopologyError::RuleConflict {
            splitter: self.topo.name(olt_home).to_owned(),
            channel: ch,
            first,
            second: "east-west members",
        };
        if onu_home == olt_home {
            if self
                .topo
                .rules(olt_home)
                .is_some_and(|r| r.xpass.contains(&ch))
            {
                return Err(conflict("home-tree members"));
            }
            self.topo.update_rules(olt_home, |r| {
                r.reflect.insert(ch);
            })?;
            return Ok(());
        }
        let home_members = s.members.iter().any(|m| {
            *m != onu && self.topo.home_splitter(self.onus[*m as usize].node) == Some(olt_home)
        });
        if home_members {
            return Err(conflict("home-tree members"));
        }
        self.topo.update_rules(olt_home, |r| {
            r.reflect.remove(&ch);
            r.xpass.insert(ch);
        })?;
        self.topo.update_rules(onu_home, |r| {
            r.xpass.insert(ch);
        })?;
        Ok(())
    }

    /// Points the ONU at the slice and fixes its propagation delay.
    fn attach(&mut self, sid: SliceId, onu: u32) -> Result<(), TopologyError> {
        let ch = self.ctl.slice(sid).channel;
        let site = self.slices[sid].site;
        let o = &self.onus[onu as usize];
        let path = self.topo.resolve_path(o.node, site, ch, self.topo.mode())?;
        let prop = self.topo.propagation_delay(&path);
        let o = &mut self.onus[onu as usize];
        o.path_prop = prop;
        o.serving = Some(sid);
        Ok(())
    }

    fn reachable(&self, from: SliceId, to: SliceId) -> bool {
        let site = self.slices[to].site;
        let Some(to_home) = self.topo.home_splitter(site) else {
            return false;
        };
        let neighbours = self.topo.xlink_neighbors(to_home);
        self.ctl.slice(from).members.iter().all(|m| {
            self.topo
                .home_splitter(self.onus[*m as usize].node)
                .is_some_and(|h| h == to_home || neighbours.contains(&h))
        })
    }

    fn handle(&mut self, sched: &mut Scheduler<Event>, ev: Event) {
        let now = sched.now();
        if now < self.last_event {
            note(
                &mut self.diag,
                format!("clock moved back from {} to {now}", self.last_event),
            );
        }
        self.last_event = now;
        match ev {
            Event::Tti(k) => self.on_tti(sched, k),
            Event::Cycle { slice, cycle } => self.on_cycle(sched, slice as usize, cycle),
            Event::Burst {
                slice,
                onu,
                data_start,
                bytes,
            } => self.on_burst(sched, slice as usize, onu, data_start, bytes),
            Event::Delivered {
                slice,
                onu,
                t_ready,
                prop,
            } => self.on_delivered(now, slice, onu, t_ready, prop),
            Event::ControlTick => self.on_tick(sched),
            Event::Activate { plan } => self.on_activate(sched, plan as usize),
            Event::Ploam { plan, onu } => self.on_ploam(sched, plan as usize, onu),
            Event::TuneDone { plan, onu } => self.on_tune_done(now, plan as usize, onu),
        }
    }

    fn generate(&mut self, tti: u64, now: Nanos) {
        let g = self.cfg.traffic.grants_per_tti;
        let window = self.cfg.policy.window_ns();
        let t_s = now as f64 / NS_PER_S as f64;
        for i in 0..self.cran.len() {
            let o = self.cran[i] as usize;
            let onu = &mut self.onus[o];
            let Some((gen, schedule)) = onu.traffic.as_mut() else {
                continue;
            };
            if let LoadSchedule::Ramp(_) = schedule {
                gen.cell
                    .set_erlang(schedule.erlang_at(t_s))
                    .expect("validated schedule");
            }
            let frame = gen.generate_tti_payload(tti, now);
            let cycle = self.cycle_ns;
            for j in 0..g {
                let size = nominal_split(frame.size, g, j);
                if size > 0 {
                    onu.queue.push_back(Msg {
                        ready: frame.t_generated + j as u64 * cycle + frame.processing_ns,
                        left: size,
                    });
                }
            }
            onu.enqueued += frame.size;
            onu.offered.push_back((frame.t_generated, frame.size));
            while onu
                .offered
                .front()
                .is_some_and(|(t, _)| *t + 2 * window < now)
            {
                onu.offered.pop_front();
            }
            let info = SchedInfo {
                onu: o as u32,
                tti_index: tti,
                payload_size: frame.size,
                ready_offset_ns: frame.processing_ns,
                received_at: now,
            };
            match onu.serving {
                Some(sid) => {
                    self.slices[sid].dba.ingest_scheduling_info(info);
                }
                None => onu.held.push(info),
            }
        }
    }

    fn on_tti(&mut self, sched: &mut Scheduler<Event>, k: u64) {
        let now = sched.now();
        if k == 0 {
            self.generate(0, now);
        }
        // Scheduling info travels one TTI ahead of the payload.
        if (k + 1) * self.tti_ns < self.traffic_end {
            self.generate(k + 1, now);
        }
        if (k + 2) * self.tti_ns < self.traffic_end {
            sched
                .schedule((k + 1) * self.tti_ns, Event::Tti(k + 1))
                .expect("future");
        }
    }

    fn on_cycle(&mut self, sched: &mut Scheduler<Event>, sid: SliceId, cycle: u64) {
        let now = sched.now();
        let audit = self.cfg.run.audit;
        let onus = &self.onus;
        let rt = &mut self.slices[sid];
        if audit {
            let members: Vec<u32> = rt.dba.members().collect();
            for m in members {
                if rt.dba.needs_init(m) {
                    continue;
                }
                let known = rt.dba.deficit(m).unwrap_or(0) + rt.dba.late_pending(m);
                let backlog = onus[m as usize].backlog_before(now);
                if known != backlog {
                    note(
                        &mut self.diag,
                        format!("cycle {cycle} slice {sid}: ONU {m} deficit {known} != backlog {backlog}"),
                    );
                }
            }
        }
        let map = rt
            .dba
            .build_bwmap(cycle, &|onu| onus[onu as usize].backlog_before(now));
        let spec = rt.dba.spec;
        let window = rt.dba.params.window_ns();
        // Capacity and no-overlap hold for every cycle.
        let used =
            spec.serialization_ns(map.granted()) + map.n_bursts as u64 * spec.burst_overhead_ns;
        if map.granted() > 0 && used > window {
            note(
                &mut self.diag,
                format!("cycle {cycle} slice {sid}: {used} ns granted in {window} ns"),
            );
        }
        let mut cursor = 0;
        for g in &map.grants {
            let end = g.end_offset_ns(&spec);
            if g.start_offset_ns < cursor || end > window {
                note(
                    &mut self.diag,
                    format!("cycle {cycle} slice {sid}: burst overlap or overrun"),
                );
            }
            cursor = end;
            sched
                .schedule(
                    now + g.data_offset_ns,
                    Event::Burst {
                        slice: sid as u16,
                        onu: g.onu,
                        data_start: now + g.data_offset_ns,
                        bytes: g.sent,
                    },
                )
                .expect("future");
        }
        let next = (cycle + 1) * self.cycle_ns;
        if next < self.t_end {
            sched
                .schedule(
                    next,
                    Event::Cycle {
                        slice: sid as u16,
                        cycle: cycle + 1,
                    },
                )
                .expect("future");
        }
    }

    fn on_burst(
        &mut self,
        sched: &mut Scheduler<Event>,
        sid: SliceId,
        onu: u32,
        data_start: Nanos,
        bytes: u64,
    ) {
        let ch = self.ctl.slice(sid).channel;
        let now = sched.now();
        let name = &self.onus[onu as usize].name;
        if !self.plan.can_transmit(name, ch, data_start) || !self.plan.can_transmit(name, ch, now) {
            self.diag.off_channel_bursts += 1;
            return;
        }
        let spec = self.slices[sid].dba.spec;
        let audit = self.cfg.run.audit;
        let o = &mut self.onus[onu as usize];
        let prop = o.path_prop;
        let mut cum = 0u64;
        let mut violations = Vec::new();
        while cum < bytes {
            let Some(front) = o.queue.front_mut() else {
                break;
            };
            if audit && data_start + spec.serialization_ns(cum) < front.ready {
                violations.push(format!(
                    "ONU {onu} sent bytes at {} before ready {}",
                    data_start + spec.serialization_ns(cum),
                    front.ready
                ));
            }
            let take = front.left.min(bytes - cum);
            front.left -= take;
            cum += take;
            if front.left == 0 {
                let msg = o.queue.pop_front().expect("front");
                let at = data_start + spec.serialization_ns(cum) + prop;
                sched
                    .schedule(
                        at,
                        Event::Delivered {
                            slice: sid as u16,
                            onu,
                            t_ready: msg.ready,
                            prop,
                        },
                    )
                    .expect("future");
            }
        }
        o.delivered += cum;
        self.diag.unused_grant_bytes += bytes - cum;
        for v in violations {
            note(&mut self.diag, v);
        }
    }

    fn on_delivered(&mut self, now: Nanos, slice: u16, onu: u32, t_ready: Nanos, prop: Nanos) {
        let o = &mut self.onus[onu as usize];
        if o.last_ready_delivered.is_some_and(|r| r >= t_ready) {
            note(&mut self.diag, format!("ONU {onu} delivered out of order"));
        }
        o.last_ready_delivered = Some(t_ready);
        self.diag.messages_delivered += 1;
        self.metrics.record_sample(
            LatencySample {
                t: now,
                latency_ns: (now - t_ready) as u32,
                olt: slice,
                onu: onu as u16,
            },
            prop,
        );
    }

    fn offered_in_window(&self, onu: u32, now: Nanos) -> u64 {
        let lo = now.saturating_sub(self.cfg.policy.window_ns());
        self.onus[onu as usize]
            .offered
            .iter()
            .filter(|(t, _)| *t >= lo && *t <= now)
            .map(|(_, b)| *b)
            .sum()
    }

    fn on_tick(&mut self, sched: &mut Scheduler<Event>) {
        let now = sched.now();
        let n = self.slices.len();
        let mut means = vec![None; n];
        for (sid, mean) in means.iter_mut().enumerate() {
            if self.ctl.slice(sid).state == SliceState::Active {
                *mean = self.metrics.log_window(sid as u16, now);
            }
        }
        for from in 0..n {
            let mean_of = |s: SliceId| means[s];
            let reach = |to: SliceId| self.reachable(from, to);
            let Some(to) = self.ctl.should_offload(from, now, &mean_of, &reach) else {
                continue;
            };
            let onus = self
                .ctl
                .select_onus(from, &|o| self.offered_in_window(o, now))
                .expect("trigger implies members");
            let trigger = means[from].unwrap_or(0.0);
            let plan = match self.ctl.issue_plan(from, to, onus.clone(), now, trigger) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("offload not issued: {e}");
                    self.diag.reconfig_errors += 1;
                    continue;
                }
            };
            for &o in &onus {
                let held = self.slices[from].dba.remove_member(o).unwrap_or_default();
                let onu = &mut self.onus[o as usize];
                onu.held.extend(held);
                onu.serving = None;
            }
            let names: Vec<String> = onus
                .iter()
                .map(|o| self.onus[*o as usize].name.clone())
                .collect();
            log::info!(
                "t={:.3}s offload {:?} {} -> {} at {:.1} us",
                now as f64 / NS_PER_S as f64,
                names,
                self.ctl.slice(from).name,
                self.ctl.slice(to).name,
                trigger
            );
            self.metrics.events.push(ControlEventRecord {
                t: now,
                action: "offload".into(),
                onus: names,
                from_slice: self.ctl.slice(from).name.clone(),
                to_slice: self.ctl.slice(to).name.clone(),
            });
            if self.ctl.slice(to).state == SliceState::Dormant {
                sched.schedule_in(
                    self.cfg.policy.activation_delay_ns(),
                    Event::Activate { plan: plan as u32 },
                );
            } else {
                self.send_ploams(sched, plan);
            }
        }
        if self.cfg.run.audit {
            if let Err(e) = self.ctl.check_partition(&self.cran) {
                note(&mut self.diag, format!("t={now}: {e}"));
            }
        }
        let next = now + self.cfg.policy.tick_ns();
        if next <= self.traffic_end {
            sched.schedule(next, Event::ControlTick).expect("future");
        }
    }

    fn send_ploams(&mut self, sched: &mut Scheduler<Event>, plan: usize) {
        let onus = self.ctl.plan(plan).onus_to_move.clone();
        for o in onus {
            let delay = self.onus[o as usize].control_delay;
            sched.schedule_in(
                delay,
                Event::Ploam {
                    plan: plan as u32,
                    onu: o,
                },
            );
        }
    }

    fn on_activate(&mut self, sched: &mut Scheduler<Event>, plan: usize) {
        let now = sched.now();
        let to = self.ctl.plan(plan).to_slice;
        if self.ctl.slice(to).state == SliceState::Dormant {
            if let Err(e) = self.ctl.activate_edge_olt(to) {
                log::warn!("{e}");
                self.diag.reconfig_errors += 1;
            }
            if let Err(e) = self.install_activation_rules(to) {
                log::warn!("activation rules: {e}");
                self.diag.reconfig_errors += 1;
            }
            self.metrics.events.push(ControlEventRecord {
                t: now,
                action: "activate".into(),
                onus: vec![],
                from_slice: String::new(),
                to_slice: self.ctl.slice(to).name.clone(),
            });
            let cycle = now.div_ceil(self.cycle_ns);
            if cycle * self.cycle_ns < self.t_end {
                sched
                    .schedule(
                        cycle * self.cycle_ns,
                        Event::Cycle {
                            slice: to as u16,
                            cycle,
                        },
                    )
                    .expect("future");
            }
        }
        self.send_ploams(sched, plan);
    }

    fn on_ploam(&mut self, sched: &mut Scheduler<Event>, plan: usize, onu: u32) {
        let now = sched.now();
        let to = self.ctl.plan(plan).to_slice;
        if let Err(e) = self.install_member_rules(to, onu) {
            log::warn!("rules for ONU {onu}: {e}");
            self.diag.reconfig_errors += 1;
        }
        let ch = self.ctl.slice(to).channel;
        match self.plan.tune_onu(&self.onus[onu as usize].name, ch, now) {
            Ok(done) => {
                sched
                    .schedule(
                        done,
                        Event::TuneDone {
                            plan: plan as u32,
                            onu,
                        },
                    )
                    .expect("future");
            }
            Err(e) => {
                log::warn!("tuning ONU {onu}: {e}");
                self.diag.reconfig_errors += 1;
            }
        }
    }

    fn on_tune_done(&mut self, now: Nanos, plan: usize, onu: u32) {
        if let Err(e) = self
            .plan
            .complete_tuning(&self.onus[onu as usize].name, now)
        {
            log::warn!("{e}");
            self.diag.reconfig_errors += 1;
        }
        let to = match self.ctl.complete_move(onu, now) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("plan {plan}: {e}");
                self.diag.reconfig_errors += 1;
                return;
            }
        };
        let held = std::mem::take(&mut self.onus[onu as usize].held);
        self.slices[to].dba.join_member(onu, held);
        if let Err(e) = self.attach(to, onu) {
            log::warn!("path for ONU {onu}: {e}");
            self.diag.reconfig_errors += 1;
        }
    }

    fn finish(mut self, wall: Instant, executed: u64) -> RunResult {
        let mut undelivered = 0;
        for o in &self.onus {
            undelivered += o.queue.len() as u64;
        }
        self.metrics.undelivered = undelivered;
        self.diag.undelivered = undelivered;
        self.diag.events_executed = executed;
        for s in &self.slices {
            self.diag.late_sched_info += s.dba.diag.late_sched_info;
            self.diag.truncated_grant_bytes += s.dba.diag.truncated_bytes;
            self.diag.overhead_overflow_cycles += s.dba.diag.overhead_overflow_cycles;
        }
        let warm = secs_to_ns(self.cfg.run.warmup_s);
        let mut summary = vec![SummaryRow {
            scope: "all".into(),
            stats: self.metrics.summarize(&Filter {
                from: Some(warm),
                ..Filter::default()
            }),
        }];
        let slice_names: Vec<String> = self.ctl.slices().iter().map(|s| s.name.clone()).collect();
        for (i, name) in slice_names.iter().enumerate() {
            summary.push(SummaryRow {
                scope: name.clone(),
                stats: self.metrics.summarize(&Filter {
                    olt: Some(i as u16),
                    from: Some(warm),
                    ..Filter::default()
                }),
            });
        }
        let offloads = self
            .ctl
            .plans()
            .iter()
            .map(|p| OffloadRecord {
                issue_time: p.issue_time,
                from: slice_names[p.from_slice].clone(),
                to: slice_names[p.to_slice].clone(),
                onus: p
                    .onus_to_move
                    .iter()
                    .map(|o| self.onus[*o as usize].name.clone())
                    .collect(),
                trigger_mean_us: p.trigger_mean_us,
                completed: p.onus_to_move.iter().map(|o| p.completions[o]).collect(),
            })
            .collect();
        let conservation = self
            .cran
            .iter()
            .map(|o| {
                let onu = &self.onus[*o as usize];
                (onu.name.clone(), onu.enqueued, onu.delivered)
            })
            .collect();
        RunResult {
            config: self.cfg,
            metrics: self.metrics,
            diagnostics: self.diag,
            summary,
            offloads,
            slice_names,
            wall_time_s: wall.elapsed().as_secs_f64(),
            conservation,
        }
    }
}

/// Runs a fully resolved scenario.
pub fn run_config(cfg: ScenarioConfig) -> Result<RunResult, RunError> {
    let wall = Instant::now();
    let mut world = World::build(cfg)?;
    let mut sched: Scheduler<Event> = Scheduler::new();
    sched.schedule(0, Event::Tti(0)).expect("start");
    for sid in 0..world.slices.len() {
        if world.ctl.slice(sid).state == SliceState::Active {
            sched
                .schedule(
                    0,
                    Event::Cycle {
                        slice: sid as u16,
                        cycle: 0,
                    },
                )
                .expect("start");
        }
    }
    let tick = world.cfg.policy.tick_ns();
    if tick <= world.traffic_end {
        sched.schedule(tick, Event::ControlTick).expect("start");
    }
    let expected = world.cran.len() as f64 * world.cfg.run.duration_s * 8_000.0;
    world.metrics.reserve(expected.min(2e7) as usize);
    let t_end = world.t_end;
    let executed = sched
        .run_until(t_end, |s, e| world.handle(s, e))
        .expect("end after start");
    Ok(world.finish(wall, executed))
}

/// Resolves `source` (preset or file) with overrides and runs it.
pub fn run_scenario(source: &str, overrides: &Overrides) -> Result<RunResult, RunError> {
    let cfg = load_scenario(source, overrides)?;
    run_config(cfg)
}

#[derive(Serialize)]
struct Manifest<'a> {
    source: &'a str,
    seed: u64,
    version: &'a str,
    wall_time_s: f64,
    overrides: &'a Overrides,
    diagnostics: &'a Diagnostics,
}

fn write(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a result bundle: resolved config, CSVs, summary, manifest.
pub fn write_bundle(
    result: &RunResult,
    dir: &Path,
    source: &str,
    overrides: &Overrides,
) -> Result<(), RunError> {
    let io = |source| RunError::Io {
        path: dir.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io)?;
    write(&dir.join("config.toml"), &result.config.to_toml())?;
    result
        .metrics
        .export_timeseries(dir, result.config.metrics.export_samples)
        .map_err(io)?;
    write(&dir.join("summary.csv"), &result.summary_csv())?;
    let manifest = Manifest {
        source,
        seed: result.config.run.seed,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s: result.wall_time_s,
        overrides,
        diagnostics: &result.diagnostics,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write(&dir.join("manifest.json"), &(json + "\n"))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub stats: Option<SummaryStats>,
}

/// Drops repeated values, keeping first occurrences, and warns about them.
pub fn dedup_values(values: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if out.contains(v) {
            log::warn!("duplicate sweep value `{v}` ignored");
        } else {
            out.push(v.clone());
        }
    }
    out
}

fn sort_key(v: &str) -> (u8, f64, String) {
    match v.parse::<f64>() {
        Ok(x) => (0, x, String::new()),
        Err(_) => (1, 0.0, v.to_owned()),
    }
}

/// Runs every (value, seed) pair in parallel. With `out`, each run gets a
/// bundle under `out/<param>=<value>/seed=<seed>` without the sample file.
pub fn sweep(
    source: &str,
    base: &Overrides,
    param: SweepParam,
    values: &[String],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, RunError> {
    let values = dedup_values(values);
    if values.is_empty() {
        return Err(RunError::Scenario("sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(RunError::Scenario("sweep needs at least one seed".into()));
    }
    let mut jobs = Vec::new();
    for v in &values {
        for &seed in seeds {
            let mut ov = base.clone();
            param.apply(&mut ov, v).map_err(RunError::Scenario)?;
            if param != SweepParam::Seed {
                ov.seed = Some(seed);
            }
            let mut cfg = load_scenario(source, &ov)?;
            cfg.metrics.export_samples = false;
            jobs.push((v.clone(), cfg.run.seed, ov, cfg));
        }
    }
    let mut rows = jobs
        .into_par_iter()
        .map(|(value, seed, ov, cfg)| {
            let r = run_config(cfg)?;
            if let Some(dir) = out {
                let sub = dir
                    .join(format!("{param}={value}"))
                    .join(format!("seed={seed}"));
                write_bundle(&r, &sub, source, &ov)?;
            }
            Ok(SweepRow {
                value,
                seed,
                stats: r.overall(),
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    rows.sort_by(|a, b| {
        sort_key(&a.value)
            .partial_cmp(&sort_key(&b.value))
            .expect("finite keys")
            .then(a.seed.cmp(&b.seed))
    });
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("parameter,seed,mean_us,p99_us\n");
    for r in rows {
        match r.stats {
            Some(s) => out.push_str(&format!(
                "{},{},{:.3},{:.3}\n",
                r.value, r.seed, s.mean_us, s.p99_us
            )),
            None => out.push_str(&format!("{},{},,\n", r.value, r.seed)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn short(p: Preset, k: u32, secs: f64) -> ScenarioConfig {
        let mut c = p
            .expand(&Overrides {
                slice_size: Some(k),
                ..Overrides::default()
            })
            .unwrap();
        c.run.duration_s = secs;
        c.run.warmup_s = 0.0;
        c
    }

    #[test]
    fn single_onu_edge_bound() {
        let r = run_config(short(Preset::Fig2Edge, 1, 0.5)).unwrap();
        assert_eq!(
            r.diagnostics.audit_violations, 0,
            "{:?}",
            r.diagnostics.audit_messages
        );
        let s = r.overall().unwrap();
        // One cycle of alignment plus a full-rate message plus 0.6 km.
        let bound = 125.0 + 34.126 + 1.0 + 3.0;
        assert!(s.max_us <= bound, "{s:?}");
        assert!(s.mean_us >= 4.0);
        assert_eq!(r.diagnostics.undelivered, 0);
        for (name, enq, del) in &r.conservation {
            assert_eq!(enq, del, "{name}");
        }
    }

    #[test]
    fn co_path_adds_feeder_delay() {
        let r = run_config(short(Preset::Fig2Co, 2, 0.3)).unwrap();
        let s = r.overall().unwrap();
        assert!(s.mean_us > 251.5, "{s:?}");
        assert_eq!(
            r.diagnostics.audit_violations, 0,
            "{:?}",
            r.diagnostics.audit_messages
        );
    }
}
