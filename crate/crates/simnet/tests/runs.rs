use bbca_core::chain::{EntryCause, Finalized};
use bbca_core::crypto::NodeId;
use bbca_core::dag::BlockType;
use bbca_simnet::{
    trips_to_commit, AdversarySpec, DelayModel, Injection, PreGst, Scenario, Simulation,
    StopReason, Strategy,
};
use proptest::prelude::*;

const D: u64 = 10;

/// Views last 3 trips, so a data block sent one trip before a view starts
/// reaches the next proposer just in time to be referenced.
fn failure_free(n: usize) -> Scenario {
    let mut s = Scenario::uniform(n, D);
    s.target_view = Some(6);
    s.injections.push(Injection {
        node: NodeId(n as u32 - 1),
        tick: 2 * D,
        payload: b"tx-1".to_vec(),
    });
    s.injections.push(Injection {
        node: NodeId(0),
        tick: 5 * D,
        payload: b"tx-2".to_vec(),
    });
    s
}

fn partial_sync(n: usize, seed: u64, strategy: Option<Strategy>) -> Scenario {
    let f = (n - 1) / 3;
    let mut adversary = AdversarySpec::none();
    if let Some(st) = strategy {
        for i in 0..f {
            adversary.nodes.insert(NodeId(1 + i as u32), st);
        }
    }
    Scenario {
        n,
        seed,
        delay: DelayModel::PartialSync {
            gst: 400,
            delta: D,
            pre_gst: PreGst::Adversarial { max: 150 },
        },
        t_max: 6 * D,
        adversary,
        injections: (0..n as u32)
            .map(|i| Injection {
                node: NodeId(i),
                tick: 13 * u64::from(i) + 1,
                payload: vec![i as u8; 3],
            })
            .collect(),
        max_ticks: 50_000,
        target_view: Some(10),
        audit: true,
        keep_lines: false,
    }
}

#[test]
fn failure_free_latency_in_trips() {
    for n in [4, 7] {
        let out = Simulation::new(failure_free(n)).unwrap().run();
        assert_eq!(out.stop, StopReason::TargetReached);
        assert!(out.trace.is_safe(), "{:?}", out.trace.violations);
        let mut backbone = 0;
        let mut data = 0;
        for (b, (_, _, kind)) in &out.trace.sent {
            let Ok(t) = trips_to_commit(&out, b, D) else {
                continue;
            };
            match kind {
                BlockType::Backbone => {
                    assert!(t.is_exactly(3), "n={n} backbone took {t} trips");
                    backbone += 1;
                }
                BlockType::Data => {
                    assert!(t.is_exactly(4), "n={n} data took {t} trips");
                    data += 1;
                }
                BlockType::NewView => {}
            }
        }
        assert!(backbone >= 6, "n={n}: {backbone} backbone blocks measured");
        assert_eq!(data, 2, "n={n}");
        assert!(out.logs_identical());
    }
}

#[test]
fn failure_free_views_follow_completion() {
    let out = Simulation::new(failure_free(4)).unwrap().run();
    for (v, entries) in &out.trace.view_entries {
        for e in entries.values() {
            let want = if *v == 1 {
                EntryCause::Start
            } else {
                EntryCause::Completed
            };
            assert_eq!(e.cause, want, "view {v}");
        }
    }
    // Every view committed, none skipped.
    for n in &out.correct {
        assert!(out.finalized(*n).values().all(|f| *f != Finalized::NoOp));
    }
}

#[test]
fn silent_leader_view_is_noop() {
    for n in [4usize, 7] {
        let mut s = Scenario::uniform(n, D);
        s.adversary = AdversarySpec::single(NodeId(1), Strategy::Silent);
        s.target_view = Some(n as u64 + 2);
        let out = Simulation::new(s).unwrap().run();
        assert_eq!(out.stop, StopReason::TargetReached);
        assert!(out.trace.is_safe(), "{:?}", out.trace.violations);
        assert_eq!(out.correct.len(), n - 1);
        for c in &out.correct {
            assert_eq!(
                out.finalized(*c).get(&1),
                Some(&Finalized::NoOp),
                "n={n} {c}"
            );
            assert!(matches!(
                out.finalized(*c).get(&2),
                Some(Finalized::Block(_))
            ));
        }
        assert!(out.logs_identical());
        assert!(out.trace.proposals.keys().all(|v| (*v as usize) % n != 1));
    }
}

#[test]
fn same_seed_same_trace() {
    for strategy in [None, Some(Strategy::Replay), Some(Strategy::EquivocateInit)] {
        let mut s = partial_sync(4, 77, strategy);
        s.keep_lines = true;
        let a = Simulation::new(s.clone()).unwrap().run();
        let b = Simulation::new(s.clone()).unwrap().run();
        assert_eq!(a.trace.digest(), b.trace.digest());
        assert_eq!(a.trace.lines(), b.trace.lines());
        s.seed = 78;
        let c = Simulation::new(s).unwrap().run();
        assert_ne!(a.trace.digest(), c.trace.digest());
    }
}

#[test]
fn scenario_rejects_too_many_byzantine() {
    let mut s = Scenario::uniform(4, D);
    s.adversary.nodes.insert(NodeId(1), Strategy::Silent);
    s.adversary.nodes.insert(NodeId(2), Strategy::Replay);
    assert!(Simulation::new(s).is_err());
    let mut s = Scenario::uniform(4, D);
    s.adversary = AdversarySpec::single(NodeId(9), Strategy::Silent);
    assert!(Simulation::new(s).is_err());
}

#[test]
fn drop_until_gst_still_commits() {
    let mut s = partial_sync(4, 3, None);
    s.delay = DelayModel::PartialSync {
        gst: 500,
        delta: D,
        pre_gst: PreGst::DropUntilGst,
    };
    let out = Simulation::new(s).unwrap().run();
    assert_eq!(out.stop, StopReason::TargetReached);
    assert!(out.trace.is_safe(), "{:?}", out.trace.violations);
    // Nothing can commit before messages start flowing.
    let first = out
        .trace
        .commits
        .values()
        .flat_map(|m| m.values())
        .min()
        .unwrap();
    assert!(*first > 500);
}

fn strategy() -> impl proptest::strategy::Strategy<Value = Option<Strategy>> {
    prop_oneof![
        Just(None),
        Just(Some(Strategy::Silent)),
        Just(Some(Strategy::EquivocateInit)),
        Just(Some(Strategy::EquivocateData)),
        Just(Some(Strategy::WithholdReady)),
        Just(Some(Strategy::Replay)),
        Just(Some(Strategy::DelayOwnMessages { max: 100 })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn safe_and_live_under_faults(seed in any::<u64>(), n in prop_oneof![Just(4usize), Just(7)], st in strategy()) {
        let out = Simulation::new(partial_sync(n, seed, st)).unwrap().run();
        prop_assert!(out.trace.is_safe(), "{:?}", out.trace.violations);
        prop_assert_eq!(out.stop, StopReason::TargetReached);
        prop_assert!(out.logs_identical());
        // Every correct node's payload made it in.
        for c in &out.correct {
            let mine = vec![c.0 as u8; 3];
            let committed = out.log(out.correct[0]).iter().any(|e| {
                e.kind == BlockType::Data
                    && out.nodes[out.correct[0].index()].dag().get(&e.block).is_some_and(|b| b.payload() == mine.as_slice())
            });
            prop_assert!(committed, "payload of {} missing", c);
        }
    }

    #[test]
    fn correct_messages_meet_their_deadline(seed in any::<u64>(), gst in 0u64..600) {
        let mut s = partial_sync(4, seed, Some(Strategy::DelayOwnMessages { max: 300 }));
        s.delay = DelayModel::PartialSync { gst, delta: D, pre_gst: PreGst::Adversarial { max: 400 } };
        let out = Simulation::new(s).unwrap().run();
        prop_assert!(out.trace.is_safe(), "{:?}", out.trace.violations);
    }
}
