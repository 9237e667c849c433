//! Randomized CAS Paxos interleavings checked against a sequential
//! append-only register.
//!
//! Each proposer appends its own tokens to a shared history. Messages sit in
//! a pool and the scheduler delivers, duplicates or drops them in random
//! order, and times proposers out. Every chosen value is compared with the
//! oracle: one value per version, later versions extend earlier ones, no
//! token appears twice, and operations that finished before another started
//! are ordered before it.

use crate::caspaxos::{
    AcceptorId, AcceptorState, AcceptorStateMachine, LeaderStateMachine, LearnerStateMachine, NakOutcome,
    PaxosMessage, Phase1Reply, Phase1bOutcome, Phase2Reply, Phase2bOutcome, ProposerId, QuorumSpec,
    RegisterValue,
};
use crate::sim::rng::stream;
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt;

type History = Vec<u32>;

/// Acceptor behaviour under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptorRule {
    Correct,
    /// Deliberately broken: promises omit the previously accepted value.
    ForgetsAcceptedOnPromise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialConfig {
    pub acceptors: usize,
    pub proposers: usize,
    pub ops_per_proposer: u32,
    pub max_steps: usize,
    pub duplicate_rate: f64,
    pub drop_rate: f64,
    pub timeout_rate: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            acceptors: 3,
            proposers: 2,
            ops_per_proposer: 3,
            max_steps: 4000,
            duplicate_rate: 0.08,
            drop_rate: 0.08,
            timeout_rate: 0.03,
        }
    }
}

/// One scheduling decision. Message ids are assigned in send order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Start(usize),
    Deliver(u64),
    Duplicate(u64),
    Drop(u64),
    Timeout(usize),
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Start(p) => write!(f, "proposer {p} starts its next operation"),
            Action::Deliver(m) => write!(f, "deliver message #{m}"),
            Action::Duplicate(m) => write!(f, "duplicate message #{m}"),
            Action::Drop(m) => write!(f, "drop message #{m}"),
            Action::Timeout(p) => write!(f, "proposer {p} times out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialStats {
    pub steps: usize,
    pub completed_ops: usize,
    pub highest_version: u64,
}

/// A failing schedule, shrunk so that removing any single action makes the
/// violation disappear.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counterexample {
    pub seed: u64,
    pub proposers: usize,
    pub violation: String,
    pub schedule: Vec<Action>,
    /// Human-readable replay of `schedule`, one line per action.
    pub trace: Vec<String>,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "agreement violation (seed {}, {} proposers): {}",
            self.seed, self.proposers, self.violation
        )?;
        for (i, line) in self.trace.iter().enumerate() {
            writeln!(f, "  {:>3}. {line}", i + 1)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dest {
    Acceptor(usize),
    Proposer(usize),
}

#[derive(Clone, Debug)]
struct Flight {
    id: u64,
    to: Dest,
    msg: PaxosMessage<History>,
}

#[derive(Clone, Copy, Debug)]
struct OpRecord {
    token: u32,
    started: usize,
    /// Step and version at which the proposer learned its value was chosen.
    finished: Option<(usize, u64)>,
}

struct Proposer {
    leader: LeaderStateMachine<History>,
    next_op: u32,
    current: Option<usize>,
}

struct Trial {
    rule: AcceptorRule,
    acceptors: Vec<AcceptorStateMachine<History>>,
    proposers: Vec<Proposer>,
    learner: LearnerStateMachine<History>,
    flights: Vec<Flight>,
    next_id: u64,
    chosen: BTreeMap<u64, History>,
    ops: Vec<OpRecord>,
    ops_per_proposer: u32,
    step: usize,
    log: Vec<String>,
}

fn token(proposer: usize, op: u32) -> u32 {
    (proposer as u32 + 1) * 1000 + op
}

impl Trial {
    fn new(cfg: &TrialConfig, rule: AcceptorRule) -> Self {
        let quorum = QuorumSpec::majority(cfg.acceptors);
        Trial {
            rule,
            acceptors: (0..cfg.acceptors)
                .map(|i| AcceptorStateMachine::new(AcceptorId(i as u32), AcceptorState::default()))
                .collect(),
            proposers: (0..cfg.proposers)
                .map(|p| Proposer {
                    leader: LeaderStateMachine::new(ProposerId(p as u32), quorum),
                    next_op: 0,
                    current: None,
                })
                .collect(),
            learner: LearnerStateMachine::new(quorum),
            flights: Vec::new(),
            next_id: 0,
            chosen: BTreeMap::new(),
            ops: Vec::new(),
            ops_per_proposer: cfg.ops_per_proposer,
            step: 0,
            log: Vec::new(),
        }
    }

    fn send(&mut self, to: Dest, msg: PaxosMessage<History>) {
        self.next_id += 1;
        self.flights.push(Flight { id: self.next_id, to, msg });
    }

    fn broadcast(&mut self, msg: PaxosMessage<History>) {
        for a in 0..self.acceptors.len() {
            self.send(Dest::Acceptor(a), msg.clone());
        }
    }

    fn can_start(&self, p: usize) -> bool {
        let pr = &self.proposers[p];
        pr.current.is_none() && pr.next_op < self.ops_per_proposer
    }

    fn is_active(&self, p: usize) -> bool {
        self.proposers[p].current.is_some()
    }

    fn done(&self) -> bool {
        self.flights.is_empty() && (0..self.proposers.len()).all(|p| !self.can_start(p) && !self.is_active(p))
    }

    /// Applies one action. Actions that no longer apply are ignored, which
    /// lets shrunk schedules replay.
    fn apply(&mut self, action: Action) -> Result<(), String> {
        self.step += 1;
        match action {
            Action::Start(p) => {
                if p >= self.proposers.len() || !self.can_start(p) {
                    return Ok(());
                }
                let pr = &mut self.proposers[p];
                let op = pr.next_op;
                pr.next_op += 1;
                pr.current = Some(self.ops.len());
                self.ops.push(OpRecord {
                    token: token(p, op),
                    started: self.step,
                    finished: None,
                });
                let m = pr.leader.start_phase1(None);
                self.log.push(format!("{action}: token {} with ballot {}", token(p, op), m.ballot));
                self.broadcast(PaxosMessage::Phase1a(m));
            }
            Action::Timeout(p) => {
                if p >= self.proposers.len() || !self.is_active(p) {
                    return Ok(());
                }
                let pr = &mut self.proposers[p];
                pr.leader.abandon();
                let m = pr.leader.start_phase1(None);
                self.log.push(format!("{action}: retries with ballot {}", m.ballot));
                self.broadcast(PaxosMessage::Phase1a(m));
            }
            Action::Drop(id) => {
                if let Some(i) = self.flights.iter().position(|f| f.id == id) {
                    let f = self.flights.remove(i);
                    self.log.push(format!("{action} ({} to {:?})", f.msg.kind(), f.to));
                }
            }
            Action::Duplicate(id) => {
                if let Some(f) = self.flights.iter().find(|f| f.id == id).cloned() {
                    self.log.push(format!("{action} ({} to {:?}) as #{}", f.msg.kind(), f.to, self.next_id + 1));
                    self.send(f.to, f.msg);
                }
            }
            Action::Deliver(id) => {
                if let Some(i) = self.flights.iter().position(|f| f.id == id) {
                    let f = self.flights.remove(i);
                    self.log.push(format!("{action}: {} {} to {:?}", f.msg.kind(), f.msg.ballot(), f.to));
                    self.deliver(f)?;
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, f: Flight) -> Result<(), String> {
        match (f.to, f.msg) {
            (Dest::Acceptor(a), PaxosMessage::Phase1a(m)) => {
                let from = m.ballot.proposer.0 as usize;
                let reply = match self.acceptors[a].on_phase1a(&m) {
                    Phase1Reply::Promise(mut p) => {
                        if self.rule == AcceptorRule::ForgetsAcceptedOnPromise {
                            p.accepted = None;
                        }
                        PaxosMessage::Phase1b(p)
                    }
                    Phase1Reply::Reject(n) => PaxosMessage::Nak(n),
                };
                self.send(Dest::Proposer(from), reply);
            }
            (Dest::Acceptor(a), PaxosMessage::Phase2a(m)) => {
                let from = m.ballot.proposer.0 as usize;
                let reply = match self.acceptors[a].on_phase2a(&m) {
                    Phase2Reply::Accepted(b) => PaxosMessage::Phase2b(b),
                    Phase2Reply::Reject(n) => PaxosMessage::Nak(n),
                };
                self.send(Dest::Proposer(from), reply);
            }
            (Dest::Proposer(p), PaxosMessage::Phase1b(m)) => {
                let Some(op) = self.proposers[p].current else { return Ok(()) };
                let tok = self.ops[op].token;
                let outcome = self.proposers[p].leader.on_phase1b(&m, |cur| {
                    let mut h = cur.map(|v| v.payload.clone()).unwrap_or_default();
                    if !h.contains(&tok) {
                        h.push(tok);
                    }
                    Some(h)
                });
                if let Phase1bOutcome::Accept(m2) = outcome {
                    self.broadcast(PaxosMessage::Phase2a(m2));
                }
            }
            (Dest::Proposer(p), PaxosMessage::Phase2b(m)) => {
                if let Some(v) = self.learner.learn(&m) {
                    self.record_chosen(&v)?;
                }
                if let Phase2bOutcome::Chosen(v) = self.proposers[p].leader.on_phase2b(&m) {
                    self.record_chosen(&v)?;
                    if let Some(op) = self.proposers[p].current.take() {
                        let tok = self.ops[op].token;
                        if !v.payload.contains(&tok) {
                            return Err(format!("proposer {p} was told token {tok} is in a history without it"));
                        }
                        self.ops[op].finished = Some((self.step, v.cas_version));
                    }
                }
            }
            (Dest::Proposer(p), PaxosMessage::Nak(n))
                if self.proposers[p].current.is_some() && self.proposers[p].leader.on_nak(&n) == NakOutcome::Restart => {
                    let m = self.proposers[p].leader.start_phase1(Some(&n));
                    self.broadcast(PaxosMessage::Phase1a(m));
                }
            _ => {}
        }
        Ok(())
    }

    fn record_chosen(&mut self, v: &RegisterValue<History>) -> Result<(), String> {
        if let Some(prev) = self.chosen.get(&v.cas_version) {
            if *prev != v.payload {
                return Err(format!(
                    "version {} chosen twice: {:?} and {:?}",
                    v.cas_version, prev, v.payload
                ));
            }
            return Ok(());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(t) = v.payload.iter().find(|t| !seen.insert(**t)) {
            return Err(format!("token {t} appears twice in version {}", v.cas_version));
        }
        let below = self.chosen.range(..v.cas_version).next_back();
        let above = self.chosen.range(v.cas_version + 1..).next();
        if let Some((ver, h)) = below {
            if !v.payload.starts_with(h) {
                return Err(format!(
                    "version {} {:?} does not extend version {ver} {:?}",
                    v.cas_version, v.payload, h
                ));
            }
        }
        if let Some((ver, h)) = above {
            if !h.starts_with(&v.payload) {
                return Err(format!(
                    "version {ver} {:?} does not extend version {} {:?}",
                    h, v.cas_version, v.payload
                ));
            }
        }
        self.chosen.insert(v.cas_version, v.payload.clone());
        Ok(())
    }

    /// Real-time order: an operation that finished before another started
    /// must come first in the final history.
    fn check_real_time(&self) -> Result<(), String> {
        let Some((_, last)) = self.chosen.iter().next_back() else {
            return Ok(());
        };
        let pos = |t: u32| last.iter().position(|&x| x == t);
        for a in &self.ops {
            let Some((end, _)) = a.finished else { continue };
            let Some(pa) = pos(a.token) else {
                return Err(format!("finished token {} missing from the latest history", a.token));
            };
            for b in &self.ops {
                if b.started > end {
                    if let Some(pb) = pos(b.token) {
                        if pb < pa {
                            return Err(format!(
                                "token {} started after token {} finished but precedes it",
                                b.token, a.token
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Picks the next action, or `None` once the trial has quiesced.
fn choose<R: Rng>(t: &Trial, cfg: &TrialConfig, rng: &mut R) -> Option<Action> {
    if t.done() {
        return None;
    }
    let startable: Vec<usize> = (0..t.proposers.len()).filter(|&p| t.can_start(p)).collect();
    let active: Vec<usize> = (0..t.proposers.len()).filter(|&p| t.is_active(p)).collect();
    let x: f64 = rng.random();
    if !active.is_empty() && (t.flights.is_empty() || x < cfg.timeout_rate) {
        return Some(Action::Timeout(active[rng.random_range(0..active.len())]));
    }
    if !startable.is_empty() && (t.flights.is_empty() || rng.random::<f64>() < 0.1) {
        return Some(Action::Start(startable[rng.random_range(0..startable.len())]));
    }
    if t.flights.is_empty() {
        return None;
    }
    let id = t.flights[rng.random_range(0..t.flights.len())].id;
    let y: f64 = rng.random();
    Some(if y < cfg.drop_rate {
        Action::Drop(id)
    } else if y < cfg.drop_rate + cfg.duplicate_rate {
        Action::Duplicate(id)
    } else {
        Action::Deliver(id)
    })
}

fn replay(cfg: &TrialConfig, rule: AcceptorRule, schedule: &[Action]) -> (Result<(), String>, Vec<String>) {
    let mut t = Trial::new(cfg, rule);
    for &a in schedule {
        if let Err(e) = t.apply(a) {
            return (Err(e), t.log);
        }
    }
    let r = t.check_real_time();
    (r, t.log)
}

/// Removes actions one at a time while the schedule still fails.
fn shrink(cfg: &TrialConfig, rule: AcceptorRule, mut schedule: Vec<Action>) -> Vec<Action> {
    let mut i = 0;
    while i < schedule.len() {
        let mut candidate = schedule.clone();
        candidate.remove(i);
        if replay(cfg, rule, &candidate).0.is_err() {
            schedule = candidate;
        } else {
            i += 1;
        }
    }
    schedule
}

/// Runs one randomized trial.
pub fn run_trial(seed: u64, cfg: &TrialConfig, rule: AcceptorRule) -> Result<TrialStats, Box<Counterexample>> {
    let mut rng = stream(seed, "agreement", 0);
    let mut t = Trial::new(cfg, rule);
    let mut schedule = Vec::new();
    let mut failure = None;
    while schedule.len() < cfg.max_steps {
        let Some(a) = choose(&t, cfg, &mut rng) else { break };
        schedule.push(a);
        if let Err(e) = t.apply(a) {
            failure = Some(e);
            break;
        }
    }
    if failure.is_none() {
        failure = t.check_real_time().err();
    }
    match failure {
        None => Ok(TrialStats {
            steps: schedule.len(),
            completed_ops: t.ops.iter().filter(|o| o.finished.is_some()).count(),
            highest_version: t.chosen.keys().next_back().copied().unwrap_or(0),
        }),
        Some(_) => {
            let schedule = shrink(cfg, rule, schedule);
            let (result, trace) = replay(cfg, rule, &schedule);
            Err(Box::new(Counterexample {
                seed,
                proposers: cfg.proposers,
                violation: result.err().unwrap_or_default(),
                schedule,
                trace,
            }))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AgreementSummary {
    pub trials: u64,
    pub completed_ops: u64,
    pub chosen_versions: u64,
}

/// Runs `trials` trials alternating between 2 and 3 proposers.
pub fn run_trials(trials: u64, base_seed: u64, rule: AcceptorRule) -> Result<AgreementSummary, Box<Counterexample>> {
    let mut summary = AgreementSummary::default();
    for i in 0..trials {
        let cfg = TrialConfig {
            proposers: 2 + (i % 2) as usize,
            ..TrialConfig::default()
        };
        let stats = run_trial(base_seed.wrapping_add(i), &cfg, rule)?;
        summary.trials += 1;
        summary.completed_ops += stats.completed_ops as u64;
        summary.chosen_versions += stats.highest_version;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correct_acceptors_pass_and_make_progress() {
        let s = run_trials(300, 11, AcceptorRule::Correct).unwrap();
        assert_eq!(s.trials, 300);
        assert!(s.completed_ops > 300 * 4, "{s:?}");
    }

    #[test]
    fn forgetful_acceptor_is_caught_with_a_short_trace() {
        let err = run_trials(2000, 11, AcceptorRule::ForgetsAcceptedOnPromise).unwrap_err();
        assert!(!err.violation.is_empty());
        assert!(err.schedule.len() < 40, "{err}");
        let (again, _) = replay(
            &TrialConfig {
                proposers: err.proposers,
                ..TrialConfig::default()
            },
            AcceptorRule::ForgetsAcceptedOnPromise,
            &err.schedule,
        );
        assert!(again.is_err());
    }
}
