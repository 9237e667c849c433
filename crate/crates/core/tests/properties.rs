//! Property tests across the public API.

use ppaf::caspaxos::codec::{decode, encode};
use ppaf::caspaxos::{
    AcceptorId, AcceptorState, AcceptorStateMachine, Ballot, Phase1Reply, Phase1a, Phase2Reply, Phase2a, PaxosMessage,
    ProposerId, RegisterValue,
};
use ppaf::failover::{
    transition, truncate_false_progress, FailoverManagerState, FailoverParams, IntentKind, LeaseRequest,
    PartitionReport, ProgressTable, RegionId, StateEdit, TopologyIntent,
};
use ppaf::scheduler::{backoff_range, static_nak_delay, SchedulerStats};
use ppaf::store::{DocumentStore, FileStore, MemoryStore, StoreError};
use ppaf::time::SimTime;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::time::Duration;

fn ballot() -> impl Strategy<Value = Ballot> {
    (0u64..6, 0u32..3).prop_map(|(r, p)| Ballot::new(r, ProposerId(p)))
}

#[derive(Clone, Debug)]
enum AcceptorInput {
    P1(Ballot),
    P2(Ballot, u32),
}

fn acceptor_input() -> impl Strategy<Value = AcceptorInput> {
    prop_oneof![
        ballot().prop_map(AcceptorInput::P1),
        (ballot(), any::<u32>()).prop_map(|(b, v)| AcceptorInput::P2(b, v)),
    ]
}

proptest! {
    #[test]
    fn ballots_order_lexicographically(a in ballot(), b in ballot()) {
        prop_assert_eq!(a.cmp(&b), (a.round, a.proposer.0).cmp(&(b.round, b.proposer.0)));
    }

    #[test]
    fn acceptor_promises_only_grow(inputs in prop::collection::vec(acceptor_input(), 1..40)) {
        let mut acc = AcceptorStateMachine::<u32>::new(AcceptorId(0), AcceptorState::default());
        for input in inputs {
            let before = acc.state().promised;
            match input {
                AcceptorInput::P1(b) => {
                    let promised = matches!(acc.on_phase1a(&Phase1a { ballot: b }), Phase1Reply::Promise(_));
                    prop_assert_eq!(promised, before.is_none_or(|p| b > p));
                }
                AcceptorInput::P2(b, v) => {
                    let value = RegisterValue { payload: v, cas_version: 1 };
                    let accepted = matches!(acc.on_phase2a(&Phase2a { ballot: b, value }), Phase2Reply::Accepted(_));
                    prop_assert_eq!(accepted, before.is_none_or(|p| b >= p));
                }
            }
            let s = acc.state();
            prop_assert!(s.promised >= before);
            if let Some(a) = &s.accepted {
                prop_assert!(Some(a.ballot) <= s.promised);
            }
        }
    }

    #[test]
    fn messages_round_trip_exactly(b in ballot(), payload in any::<u64>(), version in any::<u64>(), acc in any::<u32>()) {
        let msgs: Vec<PaxosMessage<u64>> = vec![
            PaxosMessage::Phase1a(Phase1a { ballot: b }),
            PaxosMessage::Phase2a(Phase2a { ballot: b, value: RegisterValue { payload, cas_version: version } }),
            PaxosMessage::Nak(ppaf::caspaxos::Nak { acceptor: AcceptorId(acc), rejected: b, promised: b }),
        ];
        for m in msgs {
            let bytes = encode(&m);
            let back: PaxosMessage<u64> = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn truncation_point_is_fork_epoch_end(
        steps in prop::collection::vec((1u64..4, 0u64..50), 1..8),
        local in 0u64..400,
        probe in 0u64..40,
    ) {
        let mut table = ProgressTable::new();
        let (mut epoch, mut lsn) = (0, 0);
        for (de, dl) in steps {
            epoch += de;
            lsn += dl;
            table.record(epoch, lsn).unwrap();
        }
        match truncate_false_progress(&table, local, probe) {
            Ok(cut) => {
                let end = table.get(probe).unwrap();
                prop_assert_eq!(cut, end.min(local));
            }
            Err(e) => {
                prop_assert!(table.get(probe).is_none());
                prop_assert_eq!(e.fork_epoch, probe);
            }
        }
    }

    #[test]
    fn plain_average_matches_two_pass(xs in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let s = xs.iter().fold(SchedulerStats::new(1.0).unwrap(), |s, &x| s.record(x));
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = mean.abs().max(sd).max(1.0);
        prop_assert!((s.mean() - mean).abs() <= 1e-9 * scale);
        prop_assert!((s.std_dev() - sd).abs() <= 1e-9 * scale);
    }

    #[test]
    fn smoothed_mean_stays_within_sample_range(
        alpha in 0.01f64..1.0,
        xs in prop::collection::vec(0f64..10.0, 1..100),
    ) {
        let s = xs.iter().fold(SchedulerStats::new(alpha).unwrap(), |s, &x| s.record(x));
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean() >= lo - 1e-9 && s.mean() <= hi + 1e-9);
        prop_assert!(s.std_dev() >= 0.0);
    }

    #[test]
    fn static_delay_within_window(attempt in 1u32..20, delta_ms in 1u64..100, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta = Duration::from_millis(delta_ms);
        let d = static_nak_delay(attempt, delta, &mut rng).unwrap();
        prop_assert!(d.as_secs_f64() <= delta.as_secs_f64() * backoff_range(attempt).unwrap());
    }
}

#[derive(Clone, Debug)]
enum FmInput {
    Report { region: u16, healthy: bool, lag: bool, advance_s: u64 },
    Revoke { region: u16, advance_s: u64 },
    Readd { region: u16, advance_s: u64 },
    RevokeWriteStatus { advance_s: u64 },
}

fn fm_input() -> impl Strategy<Value = FmInput> {
    let advance = prop_oneof![Just(1u64), Just(15), Just(30), Just(60)];
    prop_oneof![
        4 => (0u16..3, any::<bool>(), any::<bool>(), advance.clone())
            .prop_map(|(region, healthy, lag, advance_s)| FmInput::Report { region, healthy, lag, advance_s }),
        1 => (0u16..3, advance.clone()).prop_map(|(region, advance_s)| FmInput::Revoke { region, advance_s }),
        1 => (0u16..3, advance.clone()).prop_map(|(region, advance_s)| FmInput::Readd { region, advance_s }),
        1 => advance.prop_map(|advance_s| FmInput::RevokeWriteStatus { advance_s }),
    ]
}

fn fm_report(s: &FailoverManagerState<f64>, region: RegionId, lsn: u64, lag: bool, healthy: bool, now: SimTime) -> PartitionReport {
    PartitionReport {
        region,
        healthy,
        committed_lsn: if lag { lsn.saturating_sub(5) } else { lsn },
        epoch_seen: if lag { s.epoch.saturating_sub(1) } else { s.epoch },
        report_time: now,
        writes_quiesced: s.write_region == region && s.status(region).is_some_and(|st| st.is_write()) && !s.writes_enabled(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn failover_state_stays_valid(inputs in prop::collection::vec(fm_input(), 1..60)) {
        let params = FailoverParams::default();
        let mut s: FailoverManagerState<f64> =
            FailoverManagerState::bootstrap((0..3).map(RegionId).collect(), 1, SchedulerStats::default());
        let mut now = SimTime::ZERO;
        let mut lsn = 0;
        for (i, input) in inputs.into_iter().enumerate() {
            let w = s.write_region;
            let edit = match input {
                FmInput::Report { region, healthy, lag, advance_s } => {
                    now += Duration::from_secs(advance_s);
                    StateEdit::report_only(fm_report(&s, RegionId(region), lsn, lag, healthy, now))
                }
                FmInput::Revoke { region, advance_s } => {
                    now += Duration::from_secs(advance_s);
                    StateEdit {
                        lease_requests: vec![LeaseRequest::Revoke { region: RegionId(region) }],
                        ..StateEdit::report_only(fm_report(&s, w, lsn, false, true, now))
                    }
                }
                FmInput::Readd { region, advance_s } => {
                    now += Duration::from_secs(advance_s);
                    StateEdit {
                        lease_requests: vec![LeaseRequest::Readd {
                            region: RegionId(region),
                            acked_lsn: lsn,
                            reference_lsn: lsn,
                            max_lag: 0,
                        }],
                        ..StateEdit::report_only(fm_report(&s, w, lsn, false, true, now))
                    }
                }
                FmInput::RevokeWriteStatus { advance_s } => {
                    now += Duration::from_secs(advance_s);
                    StateEdit {
                        intents: vec![TopologyIntent { id: i as u64 + 1, kind: IntentKind::RevokeWriteStatus }],
                        ..StateEdit::report_only(fm_report(&s, w, lsn, false, true, now))
                    }
                }
            };
            let next = transition(&s, &edit, now, &params);
            prop_assert!(next.check_invariants().is_ok(), "{:?}", next.check_invariants());
            prop_assert!(next.epoch >= s.epoch);
            prop_assert!(next.epoch <= s.epoch + 1, "one edit moved the epoch twice");
            if next.write_region != s.write_region {
                prop_assert_eq!(next.epoch, s.epoch + 1);
            } else {
                prop_assert_eq!(next.epoch, s.epoch);
            }
            let writers = next.region_status.values().filter(|st| st.is_write()).count();
            prop_assert_eq!(writers, 1);
            if next.writes_enabled() {
                lsn += 3;
            }
            s = next;
        }
    }
}

#[derive(Clone, Debug)]
enum StoreOp {
    Read(u8),
    /// Swap conditioned on the current version plus `skew`.
    Cas(u8, i8, u8),
}

fn store_ops() -> impl Strategy<Value = Vec<StoreOp>> {
    prop::collection::vec(
        prop_oneof![
            (0u8..3).prop_map(StoreOp::Read),
            (0u8..3, -1i8..=1, any::<u8>()).prop_map(|(k, s, b)| StoreOp::Cas(k, s, b)),
        ],
        1..60,
    )
}

/// Replays `ops` against `store` and a map of (version, body) per key.
fn matches_model<S: DocumentStore>(store: &S, ops: &[StoreOp]) -> Result<(), TestCaseError> {
    let mut model: HashMap<String, (u64, Vec<u8>)> = HashMap::new();
    for op in ops {
        match *op {
            StoreOp::Read(k) => {
                let key = format!("k{k}");
                let got = store.read(&key).unwrap().map(|d| (d.store_version, d.body));
                prop_assert_eq!(got, model.get(&key).cloned());
            }
            StoreOp::Cas(k, skew, b) => {
                let key = format!("k{k}");
                let current = model.get(&key).map_or(0, |d| d.0);
                let expected = current.saturating_add_signed(i64::from(skew));
                let got = store.compare_and_swap(&key, expected, vec![b]);
                if expected == current {
                    prop_assert_eq!(got, Ok(current + 1));
                    model.insert(key, (current + 1, vec![b]));
                } else {
                    prop_assert_eq!(got, Err(StoreError::VersionMismatch { current }));
                }
            }
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn memory_store_matches_model(ops in store_ops()) {
        matches_model(&MemoryStore::new(), &ops)?;
    }

    #[test]
    fn file_store_matches_model(ops in store_ops()) {
        let dir = tempfile::tempdir().unwrap();
        matches_model(&FileStore::open(dir.path()).unwrap(), &ops)?;
    }
}
