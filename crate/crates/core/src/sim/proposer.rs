//! Asynchronous driver for one proposer's CAS Paxos updates, shared by the
//! simulated worlds.

use crate::caspaxos::{
    LeaderStateMachine, Nak, NakOutcome, PaxosMessage, Phase1bOutcome, Phase2bOutcome, RegisterValue,
};
use crate::num::Scalar;
use crate::scheduler::{adaptive_nak_delay, static_nak_delay, BackoffPolicy, SchedulerStats};
use crate::time::SimTime;
use rand::Rng;
use std::time::Duration;

/// A completed update.
#[derive(Clone, Debug)]
pub struct Chosen<P> {
    pub value: RegisterValue<P>,
    pub started_at: SimTime,
    pub phase2: Duration,
    pub total: Duration,
    /// No round of this update was rejected or timed out.
    pub conflict_free: bool,
    pub rounds: u32,
}

#[derive(Clone, Debug)]
pub enum DriverStep<P> {
    Nothing,
    /// Send to every acceptor.
    Broadcast(PaxosMessage<P>),
    Chosen(Chosen<P>),
    /// The round failed; wait out a backoff for retry number `attempt`,
    /// then call [`RoundDriver::retry`].
    Backoff { attempt: u32 },
}

pub struct RoundDriver<P> {
    leader: LeaderStateMachine<P>,
    token: u64,
    active: bool,
    backing_off: bool,
    retries: u32,
    started_at: SimTime,
    phase2a_at: Option<SimTime>,
    last_nak: Option<Nak>,
}

impl<P: Clone> RoundDriver<P> {
    pub fn new(leader: LeaderStateMachine<P>) -> Self {
        RoundDriver {
            leader,
            token: 0,
            active: false,
            backing_off: false,
            retries: 0,
            started_at: SimTime::ZERO,
            phase2a_at: None,
            last_nak: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Identifies the round in flight; timers carry it to detect staleness.
    pub fn token(&self) -> u64 {
        self.token
    }

    pub fn retries(&self) -> u32 {
        self.retries
    }

    pub fn started_at(&self) -> SimTime {
        self.started_at
    }

    pub fn begin(&mut self, now: SimTime) -> PaxosMessage<P> {
        self.active = true;
        self.retries = 0;
        self.started_at = now;
        self.last_nak = None;
        self.open_round(now)
    }

    /// Starts the next round after a backoff. `None` if the timer is stale.
    pub fn retry(&mut self, token: u64, now: SimTime) -> Option<PaxosMessage<P>> {
        (self.active && self.backing_off && token == self.token).then(|| self.open_round(now))
    }

    /// Ballot rounds are at least the clock reading in microseconds.
    fn open_round(&mut self, now: SimTime) -> PaxosMessage<P> {
        self.token += 1;
        self.backing_off = false;
        self.phase2a_at = None;
        let nak = self.last_nak.take();
        PaxosMessage::Phase1a(self.leader.start_phase1_above(nak.as_ref(), now.as_micros()))
    }

    pub fn abandon(&mut self) {
        self.leader.abandon();
        self.active = false;
        self.backing_off = false;
        self.token += 1;
    }

    fn fail_round(&mut self) -> DriverStep<P> {
        self.leader.abandon();
        self.backing_off = true;
        self.retries += 1;
        DriverStep::Backoff {
            attempt: self.retries,
        }
    }

    pub fn on_reply<E>(&mut self, now: SimTime, msg: &PaxosMessage<P>, editor: E) -> DriverStep<P>
    where
        E: FnOnce(Option<&RegisterValue<P>>) -> Option<P>,
    {
        if !self.active || self.backing_off {
            return DriverStep::Nothing;
        }
        match msg {
            PaxosMessage::Phase1b(p) => match self.leader.on_phase1b(p, editor) {
                Phase1bOutcome::Accept(p2a) => {
                    self.phase2a_at = Some(now);
                    DriverStep::Broadcast(PaxosMessage::Phase2a(p2a))
                }
                Phase1bOutcome::Unchanged(_) => {
                    // Editors used by the simulator always produce a value.
                    self.active = false;
                    DriverStep::Nothing
                }
                Phase1bOutcome::Pending | Phase1bOutcome::Stale => DriverStep::Nothing,
            },
            PaxosMessage::Phase2b(p) => match self.leader.on_phase2b(p) {
                Phase2bOutcome::Chosen(value) => {
                    self.active = false;
                    let p2 = now - self.phase2a_at.unwrap_or(now);
                    DriverStep::Chosen(Chosen {
                        value,
                        started_at: self.started_at,
                        phase2: p2,
                        total: now - self.started_at,
                        conflict_free: self.retries == 0,
                        rounds: self.retries + 1,
                    })
                }
                _ => DriverStep::Nothing,
            },
            PaxosMessage::Nak(n) => match self.leader.on_nak(n) {
                NakOutcome::Restart => {
                    self.last_nak = Some(*n);
                    self.fail_round()
                }
                NakOutcome::Stale => DriverStep::Nothing,
            },
            PaxosMessage::Phase1a(_) | PaxosMessage::Phase2a(_) => DriverStep::Nothing,
        }
    }

    /// Round timeout for `token`.
    pub fn on_timeout(&mut self, token: u64) -> DriverStep<P> {
        if self.active && !self.backing_off && token == self.token {
            self.fail_round()
        } else {
            DriverStep::Nothing
        }
    }
}

/// Retry delay for `attempt` under `policy`.
pub fn backoff_delay<F: Scalar, R: Rng + ?Sized>(
    policy: BackoffPolicy,
    attempt: u32,
    static_delta: Duration,
    stats: &SchedulerStats<F>,
    rng: &mut R,
) -> Duration {
    let attempt = attempt.max(1);
    match policy {
        BackoffPolicy::Static => static_nak_delay(attempt, static_delta, rng),
        BackoffPolicy::Adaptive => adaptive_nak_delay(stats, attempt, rng),
    }
    .expect("attempt is at least 1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caspaxos::{AcceptorId, AcceptorState, AcceptorStateMachine, Phase1Reply, Phase2Reply, ProposerId, QuorumSpec};

    fn acceptor_reply(a: &mut AcceptorStateMachine<u32>, m: &PaxosMessage<u32>) -> PaxosMessage<u32> {
        match m {
            PaxosMessage::Phase1a(p) => match a.on_phase1a(p) {
                Phase1Reply::Promise(x) => PaxosMessage::Phase1b(x),
                Phase1Reply::Reject(n) => PaxosMessage::Nak(n),
            },
            PaxosMessage::Phase2a(p) => match a.on_phase2a(p) {
                Phase2Reply::Accepted(x) => PaxosMessage::Phase2b(x),
                Phase2Reply::Reject(n) => PaxosMessage::Nak(n),
            },
            _ => unreachable!(),
        }
    }

    #[test]
    fn uncontended_update_completes_and_times_phase2() {
        let mut accs: Vec<_> = (0..3)
            .map(|i| AcceptorStateMachine::new(AcceptorId(i), AcceptorState::default()))
            .collect();
        let mut d = RoundDriver::new(LeaderStateMachine::new(ProposerId(1), QuorumSpec::majority(3)));
        let p1a = d.begin(SimTime::from_secs(1));
        let mut p2a = None;
        for a in accs.iter_mut() {
            let r = acceptor_reply(a, &p1a);
            if let DriverStep::Broadcast(m) = d.on_reply(SimTime::from_millis(1100), &r, |_| Some(5)) {
                p2a = Some(m);
            }
        }
        let p2a = p2a.unwrap();
        let mut chosen = None;
        for a in accs.iter_mut() {
            let r = acceptor_reply(a, &p2a);
            if let DriverStep::Chosen(c) = d.on_reply(SimTime::from_millis(1250), &r, |_| None) {
                chosen = Some(c);
            }
        }
        let c = chosen.unwrap();
        assert_eq!(c.value.payload, 5);
        assert_eq!(c.phase2, Duration::from_millis(150));
        assert_eq!(c.total, Duration::from_millis(250));
        assert!(c.conflict_free);
        assert!(!d.is_active());
    }

    #[test]
    fn timeout_then_retry_uses_new_token() {
        let mut d = RoundDriver::<u32>::new(LeaderStateMachine::new(ProposerId(1), QuorumSpec::majority(3)));
        d.begin(SimTime::ZERO);
        let t = d.token();
        assert!(matches!(d.on_timeout(t + 5), DriverStep::Nothing));
        assert!(matches!(d.on_timeout(t), DriverStep::Backoff { attempt: 1 }));
        assert!(matches!(d.on_timeout(t), DriverStep::Nothing));
        assert!(d.retry(t, SimTime::from_secs(3)).is_some());
        assert!(d.retry(t, SimTime::from_secs(3)).is_none());
        assert_ne!(d.token(), t);
    }
}
