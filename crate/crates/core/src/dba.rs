//! Cooperative upstream DBA for one OLT channel. Scheduling information
//! arrives a TTI ahead, so each grant cycle carries the cycle's share of
//! every member's payload plus any carried deficit, placed just in time
//! for the data to be ready at the ONU.

use std::collections::BTreeMap;

use crate::sim::Nanos;
use crate::traffic::nominal_split;
use crate::wavelength::{ChannelId, ChannelSpec};

/// Advance notice of one TTI's payload from the mobile scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedInfo {
    pub onu: u32,
    pub tti_index: u64,
    pub payload_size: u64,
    /// Offset of message readiness within each of the TTI's cycles.
    pub ready_offset_ns: Nanos,
    pub received_at: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub onu: u32,
    pub cycle_index: u64,
    /// Burst start within the cycle, before overhead.
    pub start_offset_ns: Nanos,
    /// First data bit within the cycle.
    pub data_offset_ns: Nanos,
    /// Bytes granted by the allocator.
    pub size: u64,
    /// Bytes that fit before the end of the usable window.
    pub sent: u64,
}

impl Grant {
    pub fn end_offset_ns(&self, spec: &ChannelSpec) -> Nanos {
        self.data_offset_ns + spec.serialization_ns(self.sent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BwMap {
    pub olt: u32,
    pub channel: ChannelId,
    pub cycle_index: u64,
    pub capacity: u64,
    pub n_bursts: u32,
    /// In transmission order.
    pub grants: Vec<Grant>,
}

impl BwMap {
    pub fn granted(&self) -> u64 {
        self.grants.iter().map(|g| g.size).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbaParams {
    pub cycle_ns: Nanos,
    pub grants_per_tti: u32,
    /// Fraction of each cycle reserved for residential traffic, placed at
    /// the end of the cycle.
    pub background_fraction: f64,
}

impl Default for DbaParams {
    fn default() -> Self {
        DbaParams {
            cycle_ns: 125_000,
            grants_per_tti: 8,
            background_fraction: 0.0,
        }
    }
}

impl DbaParams {
    pub fn window_ns(&self) -> Nanos {
        (self.cycle_ns as f64 * (1.0 - self.background_fraction)).floor() as Nanos
    }
}

#[derive(Debug, Clone, Default)]
struct Member {
    deficit: u64,
    pending: BTreeMap<u64, SchedInfo>,
    late: Vec<(u64, u64)>,
    needs_init: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DbaDiagnostics {
    pub late_sched_info: u64,
    pub overhead_overflow_cycles: u64,
    pub truncated_bytes: u64,
}

/// Largest-remainder proportional share of `capacity` over `demands`,
/// ties to the lower index. Returns demands unchanged when they fit.
pub fn proportional_grants(demands: &[u64], capacity: u64) -> Vec<u64> {
    let total: u128 = demands.iter().map(|d| *d as u128).sum();
    if total <= capacity as u128 {
        return demands.to_vec();
    }
    let cap = capacity as u128;
    let mut grants: Vec<u64> = demands
        .iter()
        .map(|d| (*d as u128 * cap / total) as u64)
        .collect();
    let mut left = capacity - grants.iter().sum::<u64>();
    let mut order: Vec<(u128, usize)> = demands
        .iter()
        .enumerate()
        .map(|(i, d)| ((*d as u128 * cap) % total, i))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in order {
        if left == 0 {
            break;
        }
        if grants[i] < demands[i] {
            grants[i] += 1;
            left -= 1;
        }
    }
    grants
}

#[derive(Debug, Clone)]
pub struct DbaScheduler {
    pub olt: u32,
    pub channel: ChannelId,
    pub spec: ChannelSpec,
    pub params: DbaParams,
    members: BTreeMap<u32, Member>,
    last_built: Option<u64>,
    pub diag: DbaDiagnostics,
}

impl DbaScheduler {
    pub fn new(olt: u32, channel: ChannelId, spec: ChannelSpec, params: DbaParams) -> Self {
        DbaScheduler {
            olt,
            channel,
            spec,
            params,
            members: BTreeMap::new(),
            last_built: None,
            diag: DbaDiagnostics::default(),
        }
    }

    pub fn members(&self) -> impl Iterator<Item = u32> + '_ {
        self.members.keys().copied()
    }

    pub fn is_member(&self, onu: u32) -> bool {
        self.members.contains_key(&onu)
    }

    pub fn deficit(&self, onu: u32) -> Option<u64> {
        self.members.get(&onu).map(|m| m.deficit)
    }

    /// Bytes announced late and not yet folded into the deficit.
    pub fn late_pending(&self, onu: u32) -> u64 {
        self.members
            .get(&onu)
            .map(|m| m.late.iter().map(|(_, b)| *b).sum())
            .unwrap_or(0)
    }

    pub fn needs_init(&self, onu: u32) -> bool {
        self.members.get(&onu).is_some_and(|m| m.needs_init)
    }

    pub fn cycle_start(&self, cycle_index: u64) -> Nanos {
        cycle_index * self.params.cycle_ns
    }

    /// Adds a member from the start. Its deficit starts at zero.
    pub fn add_member(&mut self, onu: u32) {
        self.members.entry(onu).or_default();
    }

    /// Adds a member mid-run. Its deficit is taken from the ONU's backlog
    /// at the next cycle build, and pending scheduling info carries over.
    pub fn join_member(&mut self, onu: u32, pending: Vec<SchedInfo>) {
        let m = self.members.entry(onu).or_default();
        m.needs_init = true;
        for info in pending {
            m.pending.insert(info.tti_index, info);
        }
    }

    /// Removes a member and hands back its not-yet-finished scheduling info.
    pub fn remove_member(&mut self, onu: u32) -> Option<Vec<SchedInfo>> {
        self.members
            .remove(&onu)
            .map(|m| m.pending.into_values().collect())
    }

    /// Records scheduling info. Info for a TTI whose first cycle is already
    /// built is late: its bytes join the deficit at the next TTI.
    pub fn ingest_scheduling_info(&mut self, info: SchedInfo) -> bool {
        let g = self.params.grants_per_tti as u64;
        let started = self.last_built.is_some_and(|c| c >= info.tti_index * g);
        let Some(m) = self.members.get_mut(&info.onu) else {
            return false;
        };
        if started {
            self.diag.late_sched_info += 1;
            m.late.push((info.tti_index + 1, info.payload_size));
        } else {
            m.pending.insert(info.tti_index, info);
        }
        true
    }

    /// Builds the bandwidth map of `cycle_index`. `backlog` reports bytes
    /// queued at an ONU with readiness strictly before the cycle start; it
    /// is only consulted for members that joined mid-run.
    pub fn build_bwmap(&mut self, cycle_index: u64, backlog: &dyn Fn(u32) -> u64) -> BwMap {
        let g = self.params.grants_per_tti;
        let tti = cycle_index / g as u64;
        let j = (cycle_index % g as u64) as u32;
        self.last_built = Some(cycle_index);

        struct Row {
            onu: u32,
            deficit: u64,
            demand: u64,
            ready: Nanos,
        }
        let mut rows = Vec::with_capacity(self.members.len());
        for (&onu, m) in self.members.iter_mut() {
            if m.needs_init {
                m.deficit = backlog(onu);
                m.needs_init = false;
            }
            if j == 0 {
                let (due, keep): (Vec<_>, Vec<_>) = m.late.iter().partition(|(t, _)| *t <= tti);
                m.deficit += due.iter().map(|(_, b)| *b).sum::<u64>();
                m.late = keep;
            }
            while let Some((&k, _)) = m.pending.first_key_value() {
                if k < tti {
                    // Should not happen: the whole TTI was scheduled.
                    m.pending.pop_first();
                } else {
                    break;
                }
            }
            let (nominal, ready) = match m.pending.get(&tti) {
                Some(info) => (nominal_split(info.payload_size, g, j), info.ready_offset_ns),
                None => (0, 0),
            };
            rows.push(Row {
                onu,
                deficit: m.deficit,
                demand: m.deficit + nominal,
                ready,
            });
        }

        let window = self.params.window_ns();
        let overhead = self.spec.burst_overhead_ns;
        // Backlog already at the ONU goes out at once; the new message is
        // granted for when it becomes ready. The two share a burst when the
        // backlog would still be draining at that point.
        let spec = self.spec;
        let split = |r: &Row| {
            r.deficit > 0 && r.demand > r.deficit && spec.serialization_ns(r.deficit) < r.ready
        };
        let n: u64 = rows
            .iter()
            .filter(|r| r.demand > 0)
            .map(|r| if split(r) { 2 } else { 1 })
            .sum();
        let capacity = if n * overhead > window {
            self.diag.overhead_overflow_cycles += 1;
            0
        } else {
            self.spec.bytes_in(window - n * overhead)
        };
        let demands: Vec<u64> = rows.iter().map(|r| r.demand).collect();
        let sizes = proportional_grants(&demands, capacity);

        let mut grants: Vec<(Nanos, Grant)> = Vec::new();
        let mut push = |earliest: Nanos, onu: u32, size: u64| {
            grants.push((
                earliest,
                Grant {
                    onu,
                    cycle_index,
                    start_offset_ns: 0,
                    data_offset_ns: 0,
                    size,
                    sent: 0,
                },
            ))
        };
        for (r, &size) in rows.iter().zip(&sizes) {
            if size == 0 {
                continue;
            }
            if size <= r.deficit {
                push(0, r.onu, size);
            } else if split(r) {
                push(0, r.onu, r.deficit);
                push(r.ready, r.onu, size - r.deficit);
            } else {
                let earliest = r
                    .ready
                    .saturating_sub(self.spec.serialization_ns(r.deficit));
                push(earliest, r.onu, size);
            }
        }
        grants.sort_by_key(|(e, gr)| (*e, gr.onu));

        let mut cursor: Nanos = 0;
        let mut placed: Vec<Grant> = Vec::with_capacity(grants.len());
        for (earliest, mut gr) in grants {
            if placed
                .last()
                .is_some_and(|p| p.onu == gr.onu && p.sent < p.size)
            {
                // The backlog part was cut short; the new part cannot jump it.
                self.diag.truncated_bytes += gr.size;
                continue;
            }
            let start = cursor.max(earliest);
            let data = start + overhead;
            let fit = if data < window {
                self.spec.bytes_in(window - data)
            } else {
                0
            };
            gr.sent = gr.size.min(fit);
            self.diag.truncated_bytes += gr.size - gr.sent;
            if gr.sent == 0 {
                continue;
            }
            gr.start_offset_ns = start;
            gr.data_offset_ns = data;
            cursor = gr.end_offset_ns(&self.spec);
            placed.push(gr);
        }

        for r in &rows {
            let sent: u64 = placed
                .iter()
                .filter(|p| p.onu == r.onu)
                .map(|p| p.sent)
                .sum();
            let m = self.members.get_mut(&r.onu).expect("row of a member");
            m.deficit = r.demand - sent;
            if j + 1 == g {
                m.pending.remove(&tti);
            }
        }

        BwMap {
            olt: self.olt,
            channel: self.channel,
            cycle_index,
            capacity,
            n_bursts: n as u32,
            grants: placed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> DbaScheduler {
        DbaScheduler::new(
            0,
            ChannelId(5),
            ChannelSpec::default(),
            DbaParams::default(),
        )
    }

    fn info(onu: u32, tti: u64, size: u64, ready: Nanos) -> SchedInfo {
        SchedInfo {
            onu,
            tti_index: tti,
            payload_size: size,
            ready_offset_ns: ready,
            received_at: 0,
        }
    }

    #[test]
    fn proportional_scaling_example() {
        let demands = vec![38_391u64; 12];
        let g = proportional_grants(&demands, 127_125);
        assert_eq!(g.iter().sum::<u64>(), 127_125);
        assert_eq!(g.iter().filter(|x| **x == 10_594).count(), 9);
        assert_eq!(g.iter().filter(|x| **x == 10_593).count(), 3);
        assert!(g[..9].iter().all(|x| *x == 10_594));
    }

    #[test]
    fn fits_unchanged() {
        assert_eq!(proportional_grants(&[5, 0, 7], 100), vec![5, 0, 7]);
        assert_eq!(proportional_grants(&[], 100), Vec::<u64>::new());
        assert_eq!(proportional_grants(&[10, 10], 0), vec![0, 0]);
    }

    #[test]
    fn single_onu_small_payload() {
        let mut s = sched();
        s.add_member(1);
        s.ingest_scheduling_info(info(1, 0, 8_000, 10_000));
        for c in 0..8 {
            let m = s.build_bwmap(c, &|_| 0);
            assert_eq!(m.grants.len(), 1);
            let g = m.grants[0];
            assert_eq!((g.size, g.sent), (1_000, 1_000));
            assert_eq!(g.start_offset_ns, 10_000);
            assert_eq!(g.data_offset_ns, 11_000);
        }
        assert_eq!(s.deficit(1), Some(0));
        let m = s.build_bwmap(8, &|_| 0);
        assert!(m.grants.is_empty());
    }

    #[test]
    fn zero_payload_no_grant() {
        let mut s = sched();
        s.add_member(1);
        s.ingest_scheduling_info(info(1, 0, 0, 0));
        assert!(s.build_bwmap(0, &|_| 0).grants.is_empty());
    }

    #[test]
    fn overload_carries_deficit() {
        let mut s = sched();
        for onu in 0..12 {
            s.add_member(onu);
            s.ingest_scheduling_info(info(onu, 0, 307_125, 0));
        }
        let m = s.build_bwmap(0, &|_| 0);
        assert_eq!(m.capacity, 127_125);
        assert_eq!(m.granted(), 127_125);
        let sent: u64 = m.grants.iter().map(|g| g.sent).sum();
        let total_deficit: u64 = (0..12).map(|o| s.deficit(o).unwrap()).sum();
        assert_eq!(total_deficit, 12 * 38_391 - sent);
        // Bursts are disjoint and inside the cycle.
        let mut cursor = 0;
        for g in &m.grants {
            assert!(g.start_offset_ns >= cursor);
            cursor = g.end_offset_ns(&s.spec);
            assert!(cursor <= 125_000);
        }
    }

    #[test]
    fn late_info_deferred() {
        let mut s = sched();
        s.add_member(1);
        s.build_bwmap(0, &|_| 0);
        assert!(s.ingest_scheduling_info(info(1, 0, 8_000, 0)));
        assert_eq!(s.diag.late_sched_info, 1);
        assert_eq!(s.late_pending(1), 8_000);
        for c in 1..8 {
            assert!(s.build_bwmap(c, &|_| 0).grants.is_empty());
        }
        let m = s.build_bwmap(8, &|_| 0);
        assert_eq!(m.grants[0].size, 8_000);
        assert_eq!(m.grants[0].start_offset_ns, 0);
    }

    #[test]
    fn burst_truncated_at_window_end() {
        let mut s = sched();
        s.add_member(1);
        // 40,000 B per cycle ready 100 us into the cycle: only 24 us remain.
        s.ingest_scheduling_info(info(1, 0, 320_000, 100_000));
        let m = s.build_bwmap(0, &|_| 0);
        let g = m.grants[0];
        assert_eq!(g.data_offset_ns, 101_000);
        assert_eq!(g.sent, s.spec.bytes_in(24_000));
        assert_eq!(s.deficit(1), Some(40_000 - 27_000));
        // The leftover goes at the start of the next cycle, the new
        // message when it is ready.
        let m = s.build_bwmap(1, &|_| 0);
        assert_eq!(m.grants.len(), 2);
        assert_eq!((m.grants[0].start_offset_ns, m.grants[0].size), (0, 13_000));
        assert_eq!(
            (m.grants[1].start_offset_ns, m.grants[1].size),
            (100_000, 40_000)
        );
        assert_eq!(m.n_bursts, 2);
    }

    #[test]
    fn background_shrinks_window() {
        let params = DbaParams {
            background_fraction: 0.3,
            ..DbaParams::default()
        };
        assert_eq!(params.window_ns(), 87_500);
        let mut s = DbaScheduler::new(0, ChannelId(2), ChannelSpec::default(), params);
        s.add_member(1);
        s.ingest_scheduling_info(info(1, 0, 8_000, 100_000));
        // Ready after the usable window: nothing this cycle.
        assert!(s.build_bwmap(0, &|_| 0).grants.is_empty());
        assert_eq!(s.deficit(1), Some(1_000));
    }

    #[test]
    fn join_initialises_from_backlog() {
        let mut s = sched();
        s.join_member(4, vec![info(4, 0, 8_000, 0)]);
        assert!(s.needs_init(4));
        let m = s.build_bwmap(3, &|onu| if onu == 4 { 3_000 } else { 0 });
        assert_eq!(m.grants[0].size, 4_000);
        assert!(!s.needs_init(4));
        let back = s.remove_member(4).unwrap();
        assert_eq!(back.len(), 1);
        assert!(!s.is_member(4));
    }
}
