mod common;

use proptest::prelude::*;
use vpon_core::dba::{proportional_grants, DbaParams, DbaScheduler};
use vpon_core::wavelength::{ChannelId, ChannelSpec};

use common::info;

#[test]
fn two_onu_four_tti_trace() {
    common::check_trace();
}

/// Straightforward restatement of largest-remainder apportionment.
fn reference_share(demands: &[u64], capacity: u64) -> Vec<u64> {
    let total: u64 = demands.iter().sum();
    if total <= capacity {
        return demands.to_vec();
    }
    let exact: Vec<f64> = demands
        .iter()
        .map(|d| *d as f64 * capacity as f64 / total as f64)
        .collect();
    let mut out: Vec<u64> = demands
        .iter()
        .map(|d| ((*d as u128 * capacity as u128) / total as u128) as u64)
        .collect();
    let mut left = capacity - out.iter().sum::<u64>();
    let mut idx: Vec<usize> = (0..demands.len()).collect();
    idx.sort_by(|&i, &j| {
        let ri = (demands[i] as u128 * capacity as u128) % total as u128;
        let rj = (demands[j] as u128 * capacity as u128) % total as u128;
        rj.cmp(&ri).then(i.cmp(&j))
    });
    for i in idx {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    for (o, e) in out.iter().zip(&exact) {
        assert!((*o as f64 - e).abs() < 1.0 + 1e-9);
    }
    out
}

proptest! {
    #[test]
    fn apportionment_matches_reference(
        demands in prop::collection::vec(0u64..400_000, 1..16),
        capacity in 0u64..200_000,
    ) {
        let got = proportional_grants(&demands, capacity);
        prop_assert_eq!(&got, &reference_share(&demands, capacity));
        let total: u64 = demands.iter().sum();
        prop_assert_eq!(got.iter().sum::<u64>(), total.min(capacity));
        for (g, d) in got.iter().zip(&demands) {
            prop_assert!(g <= d);
        }
    }

    /// Any mix of payloads and readiness: bursts stay disjoint, inside the
    /// window, within capacity, and bytes are conserved through deficits.
    #[test]
    fn cycle_invariants(
        loads in prop::collection::vec(
            prop::collection::vec((0u64..200_000, 0u64..125_000), 1..10),
            1..6,
        ),
        bg in prop::sample::select(vec![0.0, 0.3]),
    ) {
        let n = loads[0].len();
        let params = DbaParams { background_fraction: bg, ..DbaParams::default() };
        let spec = ChannelSpec::default();
        let mut d = DbaScheduler::new(0, ChannelId(2), spec, params);
        for onu in 0..n as u32 {
            d.add_member(onu);
        }
        let mut announced = 0u64;
        let mut sent = 0u64;
        let ttis = loads.len() as u64;
        for (tti, row) in loads.iter().enumerate() {
            for (onu, &(size, ready)) in row.iter().take(n).enumerate() {
                d.ingest_scheduling_info(info(onu as u32, tti as u64, size, ready));
                announced += size;
            }
        }
        let window = params.window_ns();
        let mut cycle = 0;
        loop {
            let pending: u64 = (0..n as u32).map(|o| d.deficit(o).unwrap()).sum();
            if cycle >= ttis * 8 && pending == 0 {
                break;
            }
            prop_assert!(cycle < 10_000, "backlog never drains");
            let map = d.build_bwmap(cycle, &|_| 0);
            let mut cursor = 0;
            let used: u64 = map.grants.iter().map(|g| g.sent).sum();
            prop_assert!(used <= map.capacity);
            for g in &map.grants {
                prop_assert!(g.start_offset_ns >= cursor);
                prop_assert_eq!(g.data_offset_ns, g.start_offset_ns + spec.burst_overhead_ns);
                cursor = g.end_offset_ns(&spec);
                prop_assert!(cursor <= window);
            }
            sent += used;
            cycle += 1;
        }
        let left: u64 = (0..n as u32).map(|o| d.deficit(o).unwrap()).sum();
        prop_assert_eq!(sent + left, announced);
        prop_assert_eq!(left, 0);
    }
}
