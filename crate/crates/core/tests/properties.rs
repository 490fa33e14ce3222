use std::collections::BTreeSet;

use proptest::prelude::*;
use vpon_core::controller::{OffloadPolicy, SliceController, SliceState, VPonSlice};
use vpon_core::sim::{Nanos, Scheduler};
use vpon_core::topology::{
    EastWestMode, NodeConfig, NodeRole, OdnTopology, RuleConfig, TopologyConfig, TopologyError,
    XlinkConfig,
};
use vpon_core::wavelength::{ChannelId, OltKind};

fn node(id: &str, role: NodeRole, parent: Option<&str>, km: Option<f64>) -> NodeConfig {
    NodeConfig {
        id: id.into(),
        role,
        parent: parent.map(str::to_owned),
        length_km: km,
    }
}

/// Tree A holds `onu`, tree B holds `olt2`; lengths are in whole meters.
fn cross_tree(
    dist_a_m: u32,
    dist_b_m: u32,
    drop_m: u32,
    olt_m: u32,
    xlink_m: u32,
) -> TopologyConfig {
    let km = |m: u32| Some(m as f64 / 1000.0);
    let mut t = TopologyConfig::new(vec![
        node("co", NodeRole::Co, None, None),
        node("l2", NodeRole::Level2Splitter, Some("co"), None),
        node("l1-a", NodeRole::Level1Splitter, Some("l2"), km(dist_a_m)),
        node("l1-b", NodeRole::Level1Splitter, Some("l2"), km(dist_b_m)),
        node("onu", NodeRole::OnuSite, Some("l1-a"), km(drop_m)),
        node("olt2", NodeRole::EdgeOltSite, Some("l1-b"), km(olt_m)),
    ]);
    t.xlinks.push(XlinkConfig {
        a: "l1-a".into(),
        b: "l1-b".into(),
        length_km: km(xlink_m),
    });
    t.rules = ["l1-a", "l1-b"]
        .iter()
        .map(|s| RuleConfig {
            splitter: (*s).into(),
            reflect: vec![],
            xpass: vec![6],
            trunkpass: vec![1, 2],
        })
        .collect();
    t
}

proptest! {
    #[test]
    fn overlay_replaces_xlink_with_distribution_legs(
        a in 1_000u32..30_000,
        b in 1_000u32..30_000,
        drop in 10u32..500,
        olt in 10u32..500,
        x in 100u32..5_000,
    ) {
        let topo = OdnTopology::build(&cross_tree(a, b, drop, olt, x)).unwrap();
        let onu = topo.node_id("onu").unwrap();
        let olt2 = topo.node_id("olt2").unwrap();
        let direct = topo.resolve_path(onu, olt2, ChannelId(6), EastWestMode::Direct).unwrap();
        let overlay = topo.resolve_path(onu, olt2, ChannelId(6), EastWestMode::Overlay).unwrap();
        prop_assert_eq!(direct.total_length_m, (drop + x + olt) as u64);
        prop_assert_eq!(overlay.total_length_m, (drop + a + b + olt) as u64);
        let dp = topo.propagation_delay(&direct) as i64;
        let op = topo.propagation_delay(&overlay) as i64;
        prop_assert_eq!(op - dp, 5 * (a as i64 + b as i64 - x as i64));
    }

    #[test]
    fn paths_are_symmetric(
        a in 1_000u32..30_000,
        b in 1_000u32..30_000,
        x in 100u32..5_000,
        overlay in any::<bool>(),
    ) {
        let mode = if overlay { EastWestMode::Overlay } else { EastWestMode::Direct };
        let topo = OdnTopology::build(&cross_tree(a, b, 300, 300, x)).unwrap();
        let onu = topo.node_id("onu").unwrap();
        let olt2 = topo.node_id("olt2").unwrap();
        let co = topo.co();
        for (s, d, ch) in [(onu, olt2, ChannelId(6)), (onu, co, ChannelId(1))] {
            let up = topo.resolve_path(s, d, ch, mode).unwrap();
            let down = topo.resolve_path(d, s, ch, mode).unwrap();
            prop_assert_eq!(up.total_length_m, down.total_length_m);
            prop_assert_eq!(down, up.reversed());
        }
    }

    /// A channel in no rule set of a splitter never crosses it.
    #[test]
    fn unrouted_channel_is_blocked(ch in 3u16..=8, overlay in any::<bool>()) {
        prop_assume!(ch != 6);
        let mode = if overlay { EastWestMode::Overlay } else { EastWestMode::Direct };
        let topo = OdnTopology::build(&cross_tree(10_000, 10_000, 300, 300, 1_000)).unwrap();
        let onu = topo.node_id("onu").unwrap();
        let olt2 = topo.node_id("olt2").unwrap();
        let r = topo.resolve_path(onu, olt2, ChannelId(ch), mode);
        prop_assert!(matches!(r, Err(TopologyError::NoPath { .. })), "{:?}", r);
        let r = topo.resolve_path(onu, topo.co(), ChannelId(ch), mode);
        prop_assert!(matches!(r, Err(TopologyError::NoPath { .. })), "{:?}", r);
    }

    /// Events run in non-decreasing time, FIFO among equal times, and
    /// exactly those due by the horizon run, spawned ones included.
    #[test]
    fn event_order_and_horizon(
        seeds in prop::collection::vec((0u64..1_000, 0u64..50), 1..60),
        horizon in 0u64..1_500,
    ) {
        let mut s: Scheduler<(u64, u32)> = Scheduler::new();
        for (i, &(t, _)) in seeds.iter().enumerate() {
            s.schedule(t, (i as u64, 0)).unwrap();
        }
        // Each seed event spawns one child `delay` later, one level deep.
        let mut expected = 0u64;
        for &(t, d) in &seeds {
            expected += (t <= horizon) as u64;
            expected += (t + d <= horizon) as u64;
        }
        let mut log: Vec<(Nanos, u64, u32)> = Vec::new();
        let n = s
            .run_until(horizon, |s, (id, depth)| {
                log.push((s.now(), id, depth));
                if depth == 0 {
                    let d = seeds[id as usize].1;
                    s.schedule_in(d, (id, 1));
                }
            })
            .unwrap();
        prop_assert_eq!(n, expected);
        prop_assert_eq!(s.now(), horizon);
        for w in log.windows(2) {
            prop_assert!(w[0].0 <= w[1].0);
        }
        // Seed events with the same time keep insertion order.
        let firsts: Vec<_> = log.iter().filter(|e| e.2 == 0).collect();
        for w in firsts.windows(2) {
            if w[0].0 == w[1].0 {
                prop_assert!(w[0].1 < w[1].1);
            }
        }
        prop_assert!(s.schedule(horizon.saturating_sub(1), (0, 9)).is_err() || horizon == 0);
    }
}

fn slice(
    name: &str,
    ch: u16,
    members: impl IntoIterator<Item = u32>,
    state: SliceState,
) -> VPonSlice {
    VPonSlice {
        name: name.into(),
        olt: name.into(),
        kind: OltKind::Edge,
        channel: ChannelId(ch),
        members: members.into_iter().collect(),
        pinned: BTreeSet::new(),
        state,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Random issue/complete interleavings over three slices: every ONU is
    /// always in exactly one slice or one open move.
    #[test]
    fn membership_partition(ops in prop::collection::vec((0usize..3, 0usize..3, 1usize..4, any::<bool>()), 100..200)) {
        let cran: Vec<u32> = (0..12).collect();
        let mut ctl = SliceController::init_slices(
            OffloadPolicy::default(),
            vec![
                slice("olt1", 5, 0..12, SliceState::Active),
                slice("olt2", 6, [], SliceState::Active),
                slice("olt3", 7, [], SliceState::Active),
            ],
        )
        .unwrap();
        let mut now = 0;
        let mut moves = 0;
        let mut open: Vec<u32> = Vec::new();
        for (from, to, k, complete_first) in ops {
            now += 1_000_000;
            if complete_first && !open.is_empty() {
                let onu = open.remove(0);
                let joined = ctl.complete_move(onu, now).unwrap();
                prop_assert_eq!(ctl.slice_of(onu), Some(joined));
            } else if from != to {
                let onus: Vec<u32> = ctl.slice(from).members.iter().copied().take(k).collect();
                if onus.is_empty() {
                    continue;
                }
                ctl.issue_plan(from, to, onus.clone(), now, 95.0).unwrap();
                prop_assert!(ctl.issue_plan(from, to, onus.clone(), now, 95.0).is_err());
                for o in &onus {
                    prop_assert_eq!(ctl.slice_of(*o), None);
                    prop_assert!(ctl.in_flight(*o).is_some());
                }
                open.extend(onus);
                moves += 1;
            }
            ctl.check_partition(&cran).map_err(TestCaseError::fail)?;
        }
        for onu in open.drain(..) {
            ctl.complete_move(onu, now).unwrap();
        }
        ctl.check_partition(&cran).map_err(TestCaseError::fail)?;
        let total: usize = ctl.slices().iter().map(|s| s.members.len()).sum();
        prop_assert_eq!(total, 12);
        prop_assert!(moves > 0);
    }
}

#[test]
fn hundred_reconfigurations_keep_partition() {
    // Deterministic long chain: ONUs hop olt1 -> olt2 -> olt1 one at a time.
    let cran: Vec<u32> = (0..12).collect();
    let mut ctl = SliceController::init_slices(
        OffloadPolicy::default(),
        vec![
            slice("olt1", 5, 0..12, SliceState::Active),
            slice("olt2", 6, [], SliceState::Dormant),
        ],
    )
    .unwrap();
    ctl.activate_edge_olt(1).unwrap();
    for i in 0..150u64 {
        let (from, to) = if i % 2 == 0 { (0, 1) } else { (1, 0) };
        let onu = *ctl.slice(from).members.iter().next().unwrap();
        ctl.issue_plan(from, to, vec![onu], i * 10, 90.0).unwrap();
        ctl.check_partition(&cran).unwrap();
        ctl.complete_move(onu, i * 10 + 5).unwrap();
        ctl.check_partition(&cran).unwrap();
    }
    assert_eq!(ctl.plans().len(), 150);
}
