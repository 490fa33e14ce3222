//! A hand-worked 2-ONU, 4-TTI trace of the cooperative DBA on a small
//! channel: 1 byte/ns payload, 1 us burst overhead, 10 us cycles, two
//! cycles per TTI. Every number below was computed by hand from the
//! allocation rules, not read back from the implementation.

use vpon_core::dba::{DbaParams, DbaScheduler, SchedInfo};
use vpon_core::wavelength::{ChannelId, ChannelSpec};

pub const A: u32 = 0;
pub const B: u32 = 1;

fn spec() -> ChannelSpec {
    ChannelSpec {
        line_rate_bps: 10_000_000_000,
        payload_rate_bps: 8_000_000_000,
        burst_overhead_ns: 1_000,
    }
}

fn dba() -> DbaScheduler {
    let params = DbaParams {
        cycle_ns: 10_000,
        grants_per_tti: 2,
        background_fraction: 0.0,
    };
    let mut d = DbaScheduler::new(0, ChannelId(5), spec(), params);
    d.add_member(A);
    d.add_member(B);
    d
}

pub fn info(onu: u32, tti: u64, size: u64, ready: u64) -> SchedInfo {
    SchedInfo {
        onu,
        tti_index: tti,
        payload_size: size,
        ready_offset_ns: ready,
        received_at: 0,
    }
}

// (payload, ready offset) for A and B in TTIs 0..4.
const LOAD: [[(u64, u64); 2]; 4] = [
    [(6_000, 0), (4_000, 2_000)],
    [(20_000, 0), (2_000, 1_000)],
    [(0, 0), (10_000, 3_000)],
    [(2_000, 500), (0, 0)],
];

/// (onu, start, data, size, sent) per burst, and deficits after the cycle.
type Expect = (&'static [(u32, u64, u64, u64, u64)], u64, [u64; 2]);

const TRACE: [Expect; 8] = [
    (
        &[(A, 0, 1_000, 3_000, 3_000), (B, 4_000, 5_000, 2_000, 2_000)],
        8_000,
        [0, 0],
    ),
    (
        &[(A, 0, 1_000, 3_000, 3_000), (B, 4_000, 5_000, 2_000, 2_000)],
        8_000,
        [0, 0],
    ),
    // 11,000 B asked, 8,000 B available: floors 7,272 and 727, the spare
    // byte goes to A (remainder 8,000 vs 3,000).
    (
        &[(A, 0, 1_000, 7_273, 7_273), (B, 8_273, 9_273, 727, 727)],
        8_000,
        [2_727, 273],
    ),
    // B's 273 B of backlog go out at once and its new message when ready,
    // so three bursts share 7,000 B. 12,727 and 1,273 B asked: both
    // remainders tie and the spare byte goes to the lower id.
    (
        &[
            (A, 0, 1_000, 6_364, 6_364),
            (B, 7_364, 8_364, 273, 273),
            (B, 8_637, 9_637, 363, 363),
        ],
        7_000,
        [6_363, 637],
    ),
    // A has nothing new but its deficit; it only needs immediate bursts.
    (
        &[
            (A, 0, 1_000, 3_712, 3_712),
            (B, 4_712, 5_712, 637, 637),
            (B, 6_349, 7_349, 2_651, 2_651),
        ],
        7_000,
        [2_651, 2_349],
    ),
    (
        &[
            (A, 0, 1_000, 1_856, 1_856),
            (B, 2_856, 3_856, 2_349, 2_349),
            (B, 6_205, 7_205, 2_795, 2_795),
        ],
        7_000,
        [795, 2_205],
    ),
    // A's 795 B backlog outlasts its 500 ns readiness offset: one burst.
    (
        &[(A, 0, 1_000, 1_795, 1_795), (B, 2_795, 3_795, 2_205, 2_205)],
        8_000,
        [0, 0],
    ),
    (&[(A, 500, 1_500, 1_000, 1_000)], 9_000, [0, 0]),
];

/// Replays the trace and panics at the first mismatch.
pub fn check_trace() {
    let mut d = dba();
    let announce = |d: &mut DbaScheduler, tti: usize| {
        for (onu, &(size, ready)) in LOAD[tti].iter().enumerate() {
            assert!(d.ingest_scheduling_info(info(onu as u32, tti as u64, size, ready)));
        }
    };
    // TTIs 0 and 1 are known before the first cycle, TTI k+1 at the start
    // of TTI k.
    announce(&mut d, 0);
    for (cycle, (bursts, capacity, deficits)) in TRACE.iter().enumerate() {
        if cycle % 2 == 0 && cycle / 2 + 1 < LOAD.len() {
            announce(&mut d, cycle / 2 + 1);
        }
        let map = d.build_bwmap(cycle as u64, &|_| 0);
        assert_eq!(map.capacity, *capacity, "capacity of cycle {cycle}");
        let got: Vec<_> = map
            .grants
            .iter()
            .map(|g| (g.onu, g.start_offset_ns, g.data_offset_ns, g.size, g.sent))
            .collect();
        assert_eq!(got, bursts.to_vec(), "bursts of cycle {cycle}");
        assert_eq!(
            [d.deficit(A).unwrap(), d.deficit(B).unwrap()],
            *deficits,
            "deficits after cycle {cycle}"
        );
    }
    assert_eq!(d.diag.late_sched_info, 0);
    assert_eq!(d.diag.truncated_bytes, 0);
}
