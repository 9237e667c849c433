//! Proposers contending for one register, each renewing its own lease by
//! completing an update at least once per lease window.

use super::config::{millis, secs, FaultConfig, ScenarioConfig};
use super::metrics::MetricsRecord;
use super::network::{Cut, Endpoint, LinkModel, Network, Side};
use super::proposer::{backoff_delay, DriverStep, RoundDriver};
use super::queue::EventQueue;
use super::rng::stream;
use super::stores::AcceptorStores;
use super::trace::Tracer;
use super::{RunOutput, SimError};
use crate::caspaxos::{LeaderStateMachine, PaxosMessage, ProposerId, QuorumSpec, RegisterValue};
use crate::scheduler::{next_proposal_delay, record_phase2_duration, BackoffPolicy, SchedulerStats};
use crate::time::SimTime;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;

const REGISTER: &str = "lease";

/// Register contents: the shared phase-2 statistics and the last renewal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeaseRecord {
    pub stats: SchedulerStats<f64>,
    pub holder: u32,
    pub renewals: u64,
}

enum Event {
    Start(usize),
    ToStore { from: usize, store: u16, msg: PaxosMessage<LeaseRecord> },
    ToProposer { to: usize, msg: PaxosMessage<LeaseRecord> },
    RoundTimeout { p: usize, token: u64 },
    Retry { p: usize, token: u64 },
    WindowCheck { p: usize, deadline: SimTime },
    StoreAvailability { store: u16, up: bool },
}

struct Proposer {
    driver: RoundDriver<LeaseRecord>,
    rng: ChaCha8Rng,
    deadline: SimTime,
    /// Statistics from the last value this proposer saw.
    stats: SchedulerStats<f64>,
    /// Phase-2 duration of the last success, not yet folded into the value.
    pending_sample: Option<Duration>,
    /// Duration of the last conflict-free update.
    last_clean: Option<Duration>,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    queue: EventQueue<Event>,
    net: Network,
    stores: AcceptorStores,
    proposers: Vec<Proposer>,
    tracer: Tracer,
    metrics: MetricsRecord,
    /// Value chosen for each register version, for the agreement check.
    chosen: BTreeMap<u64, LeaseRecord>,
}

pub fn run(cfg: &ScenarioConfig, keep_trace: bool) -> Result<RunOutput, SimError> {
    let n = cfg.proposers.unwrap_or(0);
    let seed = cfg.seed;
    let jitter = cfg.network.jitter;
    let mut net = Network::new(
        LinkModel {
            p50: millis(cfg.network.default_p50_ms),
            jitter,
        },
        cfg.network.drop_rate,
        stream(seed, "network", 0),
    );
    let mut link_rng = stream(seed, "links", 0);
    for p in 0..n as u16 {
        for s in 0..cfg.acceptors as u16 {
            if let Some([lo, hi]) = cfg.network.random_p50_ms {
                let ms = if hi > lo { link_rng.random_range(lo..hi) } else { lo };
                net.set_link(Endpoint::Region(p), Endpoint::Store(s), LinkModel { p50: millis(ms), jitter });
            }
        }
    }
    for l in &cfg.network.links {
        if let (Some(a), Some(b)) = (cfg.endpoint(&l.a), cfg.endpoint(&l.b)) {
            net.set_link(a, b, LinkModel { p50: millis(l.p50_ms), jitter: l.jitter.unwrap_or(jitter) });
        }
    }
    let mut queue = EventQueue::new();
    for f in &cfg.faults {
        let (start, dur) = f.window_s();
        let (from, until) = (SimTime::from_secs_f64(start), SimTime::from_secs_f64(start + dur));
        match f {
            FaultConfig::StoreOutage { store, .. } => {
                queue.push(from, Event::StoreAvailability { store: *store, up: false });
                queue.push(until, Event::StoreAvailability { store: *store, up: true });
            }
            FaultConfig::LinkPartition { a, b, .. } => {
                if let (Some(a), Some(b)) = (cfg.endpoint(a), cfg.endpoint(b)) {
                    net.add_cut(Cut { a: Side::One(a), b: Side::One(b), from, until });
                }
            }
            FaultConfig::RegionIsolation { .. } | FaultConfig::RegionPowerOutage { .. } => {}
        }
    }
    let quorum = QuorumSpec::majority(cfg.acceptors);
    let lease = secs(cfg.lease_window_s);
    let proposers = (0..n)
        .map(|i| {
            let mut rng = stream(seed, "proposer", i as u64);
            let first = SimTime::from_secs_f64(rng.random::<f64>() * cfg.proposer_interval_s);
            queue.push(first, Event::Start(i));
            let deadline = SimTime::ZERO + lease;
            queue.push(deadline, Event::WindowCheck { p: i, deadline });
            Proposer {
                driver: RoundDriver::new(LeaderStateMachine::new(ProposerId(i as u32), quorum)),
                rng,
                deadline,
                stats: SchedulerStats::new(cfg.scheduler.alpha).expect("validated alpha"),
                pending_sample: None,
                last_clean: None,
            }
        })
        .collect();
    let mut world = World {
        cfg,
        queue,
        net,
        stores: AcceptorStores::new(cfg.acceptors, millis(cfg.network.store_service_ms)),
        proposers,
        tracer: Tracer::new(keep_trace),
        metrics: MetricsRecord {
            scenario: cfg.display_name(),
            seed,
            policy: cfg.backoff_policy.as_str().to_owned(),
            proposers: n,
            sim_hours: cfg.duration_s / 3600.0,
            ..Default::default()
        },
        chosen: BTreeMap::new(),
    };
    let horizon = SimTime::from_secs_f64(cfg.duration_s);
    while let Some(at) = world.queue.peek_time() {
        if at > horizon {
            break;
        }
        let (now, ev) = world.queue.pop().expect("peeked");
        world.handle(now, ev)?;
    }
    world.metrics.finish_rates();
    Ok(RunOutput {
        metrics: world.metrics,
        trace: world.tracer.into_records(),
    })
}

impl World<'_> {
    fn violation(&self, at: SimTime, what: String) -> SimError {
        SimError::Invariant {
            at,
            what,
            trace: self.tracer.tail(),
        }
    }

    fn broadcast(&mut self, now: SimTime, p: usize, msg: PaxosMessage<LeaseRecord>) {
        let from = Endpoint::Region(p as u16);
        for s in 0..self.stores.len() as u16 {
            if let Some(at) = self.net.transmit(from, Endpoint::Store(s), now) {
                self.queue.push(at, Event::ToStore { from: p, store: s, msg: msg.clone() });
            }
        }
    }

    fn open_round(&mut self, now: SimTime, p: usize, msg: PaxosMessage<LeaseRecord>) {
        let token = self.proposers[p].driver.token();
        let timeout = millis(self.cfg.scheduler.round_timeout_ms);
        self.queue.push(now + timeout, Event::RoundTimeout { p, token });
        self.broadcast(now, p, msg);
    }

    fn handle(&mut self, now: SimTime, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Start(p) => {
                if !self.proposers[p].driver.is_active() {
                    let msg = self.proposers[p].driver.begin(now);
                    self.tracer.record(now, "propose", format!("proposer-{p}"), "");
                    self.open_round(now, p, msg);
                }
            }
            Event::ToStore { from, store, msg } => {
                let reply = self
                    .stores
                    .handle(REGISTER, store, now, &msg)
                    .map_err(|e| self.violation(now, format!("acceptor store failed: {e}")))?;
                if let Some((reply, ready)) = reply {
                    if let Some(at) = self.net.transmit(Endpoint::Store(store), Endpoint::Region(from as u16), ready) {
                        self.queue.push(at, Event::ToProposer { to: from, msg: reply });
                    }
                }
            }
            Event::ToProposer { to, msg } => self.on_reply(now, to, &msg)?,
            Event::RoundTimeout { p, token } => {
                let step = self.proposers[p].driver.on_timeout(token);
                self.apply_step(now, p, step)?;
            }
            Event::Retry { p, token } => {
                if let Some(msg) = self.proposers[p].driver.retry(token, now) {
                    self.open_round(now, p, msg);
                }
            }
            Event::WindowCheck { p, deadline } => {
                let pr = &mut self.proposers[p];
                if pr.deadline == deadline {
                    self.metrics.lease_windows_total += 1;
                    self.metrics.lease_windows_failed += 1;
                    pr.deadline = deadline + secs(self.cfg.lease_window_s);
                    let next = pr.deadline;
                    self.tracer.record(now, "lease_lost", format!("proposer-{p}"), "");
                    self.queue.push(next, Event::WindowCheck { p, deadline: next });
                }
            }
            Event::StoreAvailability { store, up } => {
                self.stores.set_available(store, up);
                self.tracer.record(now, if up { "store_up" } else { "store_down" }, format!("store-{store}"), "");
            }
        }
        Ok(())
    }

    fn on_reply(&mut self, now: SimTime, p: usize, msg: &PaxosMessage<LeaseRecord>) -> Result<(), SimError> {
        let alpha = self.cfg.scheduler.alpha;
        let pr = &mut self.proposers[p];
        let sample = pr.pending_sample;
        let seen = &mut pr.stats;
        let step = pr.driver.on_reply(now, msg, |current: Option<&RegisterValue<LeaseRecord>>| {
            let mut stats = match current {
                Some(v) => v.payload.stats.clone(),
                None => SchedulerStats::new(alpha).expect("validated alpha"),
            };
            if let Some(d) = sample {
                stats = record_phase2_duration(&stats, d);
            }
            *seen = stats.clone();
            Some(LeaseRecord {
                stats,
                holder: p as u32,
                renewals: current.map_or(0, |v| v.payload.renewals) + 1,
            })
        });
        self.apply_step(now, p, step)
    }

    fn apply_step(&mut self, now: SimTime, p: usize, step: DriverStep<LeaseRecord>) -> Result<(), SimError> {
        match step {
            DriverStep::Nothing => {}
            DriverStep::Broadcast(msg) => self.broadcast(now, p, msg),
            DriverStep::Backoff { attempt } => {
                self.metrics.cas_conflicts += 1;
                let cfg = self.cfg;
                let pr = &mut self.proposers[p];
                let delay = backoff_delay(
                    cfg.backoff_policy,
                    attempt,
                    millis(cfg.scheduler.static_delta_ms),
                    &pr.stats,
                    &mut pr.rng,
                );
                let token = pr.driver.token();
                self.queue.push(now + delay, Event::Retry { p, token });
            }
            DriverStep::Chosen(c) => {
                match self.chosen.get(&c.value.cas_version) {
                    Some(prev) if *prev != c.value.payload => {
                        return Err(self.violation(
                            now,
                            format!("two values chosen for register version {}", c.value.cas_version),
                        ))
                    }
                    _ => {
                        self.chosen.insert(c.value.cas_version, c.value.payload.clone());
                    }
                }
                self.tracer.record(
                    now,
                    "chosen",
                    format!("proposer-{p}"),
                    format!("version={} rounds={}", c.value.cas_version, c.rounds),
                );
                let cfg = self.cfg;
                let interval = secs(cfg.proposer_interval_s);
                let lease = secs(cfg.lease_window_s);
                let pr = &mut self.proposers[p];
                pr.stats = c.value.payload.stats.clone();
                pr.pending_sample = Some(c.phase2);
                if c.conflict_free {
                    pr.last_clean = Some(c.total);
                }
                self.metrics.lease_windows_total += 1;
                pr.deadline = now + lease;
                let deadline = pr.deadline;
                let delay = match cfg.backoff_policy {
                    BackoffPolicy::Static => {
                        interval + secs(pr.rng.random::<f64>() * cfg.scheduler.static_jitter_s)
                    }
                    BackoffPolicy::Adaptive => {
                        next_proposal_delay(interval, pr.last_clean.unwrap_or(Duration::ZERO))
                    }
                };
                self.queue.push(deadline, Event::WindowCheck { p, deadline });
                self.queue.push(now + delay, Event::Start(p));
            }
        }
        Ok(())
    }
}
