//! Partition sets replicated across regions. Every region runs periodic
//! failover manager updates through the shared acceptor stores, replicates
//! or applies the write log, and serves a client. Faults are injected on a
//! schedule and safety invariants are checked after every event.

use super::config::{millis, secs, Consistency, FaultConfig, IntentConfig, ScenarioConfig};
use super::metrics::{MetricsRecord, OutageMetrics, PartitionSetMetrics};
use super::network::{Cut, Endpoint, LinkModel, Network, Side};
use super::proposer::{backoff_delay, Chosen, DriverStep, RoundDriver};
use super::queue::EventQueue;
use super::rng::stream;
use super::stores::AcceptorStores;
use super::trace::Tracer;
use super::{RunOutput, SimError};
use crate::caspaxos::{LeaderStateMachine, PaxosMessage, ProposerId, QuorumSpec, RegisterValue};
use crate::failover::{
    derive_actions, readd_lease, request_lease_revocation, transition, truncate_false_progress,
    FailoverKind, FailoverManagerState, FailoverParams, IntentKind, LeaseRequest, LocalRole,
    PartitionReport, ProgressTable, RegionId, ReplicaAction, ReplicaView, StateEdit, TopologyIntent,
};
use crate::scheduler::{next_proposal_delay, BackoffPolicy, SchedulerStats};
use crate::time::SimTime;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::rc::Rc;
use std::time::Duration;

type Fm = FailoverManagerState<f64>;

/// Entries shipped per replication message.
const REPLICATION_BATCH: usize = 500;
/// Chosen register versions remembered for the agreement check.
const AGREEMENT_WINDOW: u64 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Entry {
    epoch: u64,
    write_id: u64,
}

#[derive(Clone, Debug)]
struct ReplicateMsg {
    epoch: u64,
    /// Entries start after this position.
    prev_lsn: u64,
    entries: Vec<Entry>,
    table: ProgressTable,
    gclsn: u64,
    quiesced: bool,
    primary_len: u64,
}

/// A follower's reply to replication: its log length and whether it saw
/// a gap before the batch.
#[derive(Clone, Copy, Debug)]
struct ReplAck {
    epoch: u64,
    len: u64,
    gap: bool,
}

#[derive(Clone, Debug)]
enum Msg {
    Paxos(Box<PaxosMessage<Fm>>),
    Replicate(Box<ReplicateMsg>),
    ReplAck(ReplAck),
    Write { id: u64 },
    WriteAck { id: u64, epoch: u64, lsn: u64 },
    WriteReject { id: u64 },
    Read { id: u64, token: u64 },
    ReadOk { id: u64, lsn: u64, write_id: Option<u64> },
    ReadReject { id: u64 },
}

enum Event {
    ToStore { ps: usize, region: u16, store: u16, msg: Rc<PaxosMessage<Fm>> },
    ToNode { ps: usize, region: u16, inc: u64, from: Endpoint, msg: Msg },
    ToClient { ps: usize, from: u16, msg: Msg },
    Update { ps: usize, region: u16, inc: u64, token: u64 },
    RoundTimeout { ps: usize, region: u16, inc: u64, token: u64 },
    Retry { ps: usize, region: u16, inc: u64, token: u64 },
    WindowCheck { ps: usize, region: u16, inc: u64, deadline: SimTime },
    ReplTick { ps: usize, region: u16, inc: u64 },
    ClientWrite(usize),
    ClientRead(usize),
    ClientTimeout { ps: usize, write: bool, id: u64, attempt: usize },
    Power { region: u16, on: bool },
    FaultEdge { start: bool, label: String },
    StoreAvailability { store: u16, up: bool },
    Intent(usize),
    LivenessCheck,
}

#[derive(Clone, Copy, Debug)]
struct Follower {
    acked: u64,
    next: u64,
    last_ack: SimTime,
}

struct Node {
    region: u16,
    // Durable.
    log: Vec<Entry>,
    progress: ProgressTable,
    /// Epoch of the history this replica has synchronized with.
    synced_epoch: u64,
    /// Highest position known to be durable under strong consistency.
    gclsn: u64,
    // Volatile.
    role: LocalRole,
    learned: Option<RegisterValue<Fm>>,
    auth_table: Option<(u64, ProgressTable)>,
    /// Epoch and primary length of the message `auth_table` came from.
    table_source: (u64, u64),
    driver: RoundDriver<Fm>,
    rng: ChaCha8Rng,
    update_token: u64,
    next_update_at: SimTime,
    expedite_pending: bool,
    edit_time: SimTime,
    readds_in_flight: BTreeSet<u16>,
    pending_sample: Option<Duration>,
    last_clean: Option<Duration>,
    lease_deadline: SimTime,
    window_deadline: SimTime,
    followers: BTreeMap<u16, Follower>,
    ack_set: BTreeSet<u16>,
    pending_acks: VecDeque<(u64, u64)>,
    quiesce_caught_up: Option<u64>,
    pending_intents: Vec<TopologyIntent>,
}

impl Node {
    fn new(ps: usize, region: u16, seed: u64, quorum: QuorumSpec) -> Self {
        Node {
            region,
            log: Vec::new(),
            progress: ProgressTable::new(),
            synced_epoch: 0,
            gclsn: 0,
            role: LocalRole::Unassigned,
            learned: None,
            auth_table: None,
            table_source: (0, 0),
            driver: RoundDriver::new(LeaderStateMachine::new(ProposerId(u32::from(region)), quorum)),
            rng: stream(seed, "node", ((ps as u64) << 16) | u64::from(region)),
            update_token: 0,
            next_update_at: SimTime::MAX,
            expedite_pending: false,
            edit_time: SimTime::ZERO,
            readds_in_flight: BTreeSet::new(),
            pending_sample: None,
            last_clean: None,
            lease_deadline: SimTime::ZERO,
            window_deadline: SimTime::MAX,
            followers: BTreeMap::new(),
            ack_set: BTreeSet::new(),
            pending_acks: VecDeque::new(),
            quiesce_caught_up: None,
            pending_intents: Vec::new(),
        }
    }

    fn len(&self) -> u64 {
        self.log.len() as u64
    }

    fn last_epoch(&self) -> Option<u64> {
        self.log.last().map(|e| e.epoch)
    }

    fn primary_epoch(&self) -> Option<u64> {
        match self.role {
            LocalRole::WritePrimary { epoch } | LocalRole::Quiesced { epoch } => Some(epoch),
            _ => None,
        }
    }

    fn accepts_writes(&self, now: SimTime) -> bool {
        matches!(self.role, LocalRole::WritePrimary { .. }) && now < self.lease_deadline
    }

    fn lose_power(&mut self, quorum: QuorumSpec) {
        self.role = LocalRole::Unassigned;
        self.learned = None;
        self.auth_table = None;
        self.table_source = (0, 0);
        self.driver = RoundDriver::new(LeaderStateMachine::new(ProposerId(u32::from(self.region)), quorum));
        self.update_token += 1;
        self.next_update_at = SimTime::MAX;
        self.expedite_pending = false;
        self.readds_in_flight.clear();
        self.pending_sample = None;
        self.last_clean = None;
        self.lease_deadline = SimTime::ZERO;
        self.window_deadline = SimTime::MAX;
        self.followers.clear();
        self.ack_set.clear();
        self.pending_acks.clear();
        self.quiesce_caught_up = None;
    }
}

struct Op {
    attempts: Vec<u16>,
    idx: usize,
    token: u64,
}

#[derive(Default)]
struct Client {
    cached: Option<u16>,
    next_id: u64,
    writes: BTreeMap<u64, Op>,
    reads: BTreeMap<u64, Op>,
    token: u64,
    observed: Vec<(u64, Option<u64>)>,
}

#[derive(Clone, Copy, Debug)]
struct AckedWrite {
    id: u64,
    epoch: u64,
    lsn: u64,
}

struct OutageTrack {
    m: OutageMetrics,
    start: SimTime,
    restore: SimTime,
    triggered_at: Option<SimTime>,
    /// First client write id issued after the outage started.
    first_write_id: u64,
}

struct PartitionSet {
    register: String,
    bootstrap: Fm,
    nodes: Vec<Node>,
    client: Client,
    latest: Option<(u64, Fm)>,
    digests: BTreeMap<u64, u64>,
    acked: Vec<AckedWrite>,
    discarded: BTreeSet<(u64, u64)>,
    tracks: Vec<OutageTrack>,
    m: PartitionSetMetrics,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    params: FailoverParams,
    quorum: QuorumSpec,
    queue: EventQueue<Event>,
    net: Network,
    stores: AcceptorStores,
    tracer: Tracer,
    metrics: MetricsRecord,
    powered: Vec<bool>,
    incarnation: Vec<u64>,
    sets: Vec<PartitionSet>,
    client_order: Vec<u16>,
    active_faults: usize,
    last_disturbance: SimTime,
    intents: Vec<TopologyIntent>,
}

fn region_name(r: u16) -> String {
    RegionId(r).to_string()
}

fn digest(state: &Fm) -> u64 {
    let mut h = DefaultHasher::new();
    serde_json::to_string(state).expect("state serializes").hash(&mut h);
    h.finish()
}

pub fn run(cfg: &ScenarioConfig, keep_trace: bool) -> Result<RunOutput, SimError> {
    let mut world = World::new(cfg, keep_trace);
    let horizon = SimTime::from_secs_f64(cfg.duration_s);
    while let Some(at) = world.queue.peek_time() {
        if at > horizon {
            break;
        }
        let (now, ev) = world.queue.pop().expect("peeked");
        let touched = world.handle(now, ev)?;
        match touched {
            Some(ps) => world.check_single_writer(ps, now)?,
            None => {
                for ps in 0..world.sets.len() {
                    world.check_single_writer(ps, now)?;
                }
            }
        }
    }
    world.finish(horizon)
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig, keep_trace: bool) -> Self {
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
        let regions = cfg.regions.len() as u16;
        if let Some([lo, hi]) = cfg.network.random_p50_ms {
            let mut link_rng = stream(seed, "links", 0);
            for r in 0..regions {
                for s in 0..cfg.acceptors as u16 {
                    let ms = if hi > lo { link_rng.random_range(lo..hi) } else { lo };
                    net.set_link(Endpoint::Region(r), Endpoint::Store(s), LinkModel { p50: millis(ms), jitter });
                }
            }
        }
        for l in &cfg.network.links {
            if let (Some(a), Some(b)) = (cfg.endpoint(&l.a), cfg.endpoint(&l.b)) {
                net.set_link(a, b, LinkModel { p50: millis(l.p50_ms), jitter: l.jitter.unwrap_or(jitter) });
            }
        }
        let quorum = QuorumSpec::majority(cfg.acceptors);
        let members: Vec<RegionId> = cfg.initial_members().into_iter().map(RegionId).collect();
        let stats = SchedulerStats::new(cfg.scheduler.alpha).expect("validated alpha");
        let bootstrap = Fm::bootstrap(members, cfg.min_durability, stats);
        let mut queue = EventQueue::new();
        let interval = cfg.proposer_interval_s;
        let mut sets = Vec::with_capacity(cfg.partition_sets);
        for ps in 0..cfg.partition_sets {
            let mut nodes: Vec<Node> = (0..regions).map(|r| Node::new(ps, r, seed, quorum)).collect();
            for n in nodes.iter_mut() {
                let first = SimTime::from_secs_f64(n.rng.random::<f64>() * interval);
                n.update_token = 1;
                n.next_update_at = first;
                queue.push(first, Event::Update { ps, region: n.region, inc: 0, token: 1 });
            }
            sets.push(PartitionSet {
                register: format!("partition-set-{ps}"),
                bootstrap: bootstrap.clone(),
                nodes,
                client: Client::default(),
                latest: None,
                digests: BTreeMap::new(),
                acked: Vec::new(),
                discarded: BTreeSet::new(),
                tracks: Vec::new(),
                m: PartitionSetMetrics {
                    partition_set: ps,
                    ..Default::default()
                },
            });
            if cfg.client.enabled {
                let mut crng = stream(seed, "client", ps as u64);
                let warmup = interval + 5.0;
                let w = warmup + crng.random::<f64>() * cfg.client.write_interval_ms / 1e3;
                queue.push(SimTime::from_secs_f64(w), Event::ClientWrite(ps));
                if cfg.client.read_interval_ms > 0.0 {
                    let r = warmup + crng.random::<f64>() * cfg.client.read_interval_ms / 1e3;
                    queue.push(SimTime::from_secs_f64(r), Event::ClientRead(ps));
                }
            }
        }
        for f in &cfg.faults {
            let (start, dur) = f.window_s();
            let (from, until) = (SimTime::from_secs_f64(start), SimTime::from_secs_f64(start + dur));
            let label = match f {
                FaultConfig::RegionPowerOutage { target, .. } => {
                    let r = cfg.region_index(target).expect("validated");
                    queue.push(from, Event::Power { region: r, on: false });
                    queue.push(until, Event::Power { region: r, on: true });
                    format!("power {target}")
                }
                FaultConfig::RegionIsolation { target, .. } => {
                    let r = cfg.region_index(target).expect("validated");
                    net.add_cut(Cut { a: Side::One(Endpoint::Region(r)), b: Side::Everything, from, until });
                    format!("isolate {target}")
                }
                FaultConfig::LinkPartition { a, b, .. } => {
                    let (ea, eb) = (cfg.endpoint(a).expect("validated"), cfg.endpoint(b).expect("validated"));
                    net.add_cut(Cut { a: Side::One(ea), b: Side::One(eb), from, until });
                    format!("partition {a}-{b}")
                }
                FaultConfig::StoreOutage { store, .. } => {
                    queue.push(from, Event::StoreAvailability { store: *store, up: false });
                    queue.push(until, Event::StoreAvailability { store: *store, up: true });
                    format!("store-{store} outage")
                }
            };
            queue.push(from, Event::FaultEdge { start: true, label: label.clone() });
            queue.push(until, Event::FaultEdge { start: false, label });
        }
        let mut intents = Vec::new();
        for (i, ic) in cfg.intents.iter().enumerate() {
            let kind = match ic {
                IntentConfig::AddRegion { region, priority, .. } => IntentKind::AddRegion {
                    region: RegionId(cfg.region_index(region).expect("validated")),
                    priority: *priority,
                },
                IntentConfig::RemoveRegion { region, .. } => IntentKind::RemoveRegion {
                    region: RegionId(cfg.region_index(region).expect("validated")),
                },
                IntentConfig::RevokeWriteStatus { .. } => IntentKind::RevokeWriteStatus,
            };
            intents.push(TopologyIntent { id: i as u64 + 1, kind });
            queue.push(SimTime::from_secs_f64(ic.at_s()), Event::Intent(i));
        }
        queue.push(SimTime::ZERO + secs(cfg.lease_window_s), Event::LivenessCheck);
        World {
            cfg,
            params: cfg.failover_params(),
            quorum,
            queue,
            net,
            stores: AcceptorStores::new(cfg.acceptors, millis(cfg.network.store_service_ms)),
            tracer: Tracer::new(keep_trace),
            metrics: MetricsRecord {
                scenario: cfg.display_name(),
                seed,
                policy: cfg.backoff_policy.as_str().to_owned(),
                proposers: cfg.regions.len(),
                sim_hours: cfg.duration_s / 3600.0,
                ..Default::default()
            },
            powered: vec![true; regions as usize],
            incarnation: vec![0; regions as usize],
            sets,
            client_order: cfg.priority_order(),
            active_faults: 0,
            last_disturbance: SimTime::ZERO,
            intents,
        }
    }

    fn violation(&self, at: SimTime, what: String) -> SimError {
        SimError::Invariant {
            at,
            what,
            trace: self.tracer.tail(),
        }
    }

    fn live(&self, region: u16, inc: u64) -> bool {
        self.powered[region as usize] && self.incarnation[region as usize] == inc
    }

    // ---- messaging ----

    fn send_to_node(&mut self, now: SimTime, ps: usize, from: Endpoint, region: u16, msg: Msg) {
        if let Some(at) = self.net.transmit(from, Endpoint::Region(region), now) {
            let inc = self.incarnation[region as usize];
            self.queue.push(at, Event::ToNode { ps, region, inc, from, msg });
        }
    }

    fn send_to_client(&mut self, now: SimTime, ps: usize, from: u16, msg: Msg) {
        if let Some(at) = self.net.transmit(Endpoint::Region(from), Endpoint::Client, now) {
            self.queue.push(at, Event::ToClient { ps, from, msg });
        }
    }

    fn broadcast(&mut self, now: SimTime, ps: usize, region: u16, msg: PaxosMessage<Fm>) {
        let msg = Rc::new(msg);
        for s in 0..self.stores.len() as u16 {
            if let Some(at) = self.net.transmit(Endpoint::Region(region), Endpoint::Store(s), now) {
                self.queue.push(at, Event::ToStore { ps, region, store: s, msg: Rc::clone(&msg) });
            }
        }
    }

    // ---- event dispatch ----

    fn handle(&mut self, now: SimTime, ev: Event) -> Result<Option<usize>, SimError> {
        match ev {
            Event::ToStore { ps, region, store, msg } => {
                let register = self.sets[ps].register.clone();
                let reply = self
                    .stores
                    .handle(&register, store, now, &msg)
                    .map_err(|e| self.violation(now, format!("acceptor store failed: {e}")))?;
                if let Some((reply, ready)) = reply {
                    if let Some(at) = self.net.transmit(Endpoint::Store(store), Endpoint::Region(region), ready) {
                        let inc = self.incarnation[region as usize];
                        self.queue.push(at, Event::ToNode {
                            ps,
                            region,
                            inc,
                            from: Endpoint::Store(store),
                            msg: Msg::Paxos(Box::new(reply)),
                        });
                    }
                }
                Ok(Some(ps))
            }
            Event::ToNode { ps, region, inc, from, msg } => {
                if self.live(region, inc) {
                    self.on_node_message(now, ps, region, from, msg)?;
                }
                Ok(Some(ps))
            }
            Event::ToClient { ps, from, msg } => {
                self.on_client_message(now, ps, from, msg)?;
                Ok(Some(ps))
            }
            Event::Update { ps, region, inc, token } => {
                if self.live(region, inc) && self.sets[ps].nodes[region as usize].update_token == token {
                    self.start_update(now, ps, region);
                }
                Ok(Some(ps))
            }
            Event::RoundTimeout { ps, region, inc, token } => {
                if self.live(region, inc) {
                    let step = self.sets[ps].nodes[region as usize].driver.on_timeout(token);
                    self.apply_step(now, ps, region, step)?;
                }
                Ok(Some(ps))
            }
            Event::Retry { ps, region, inc, token } => {
                if self.live(region, inc) {
                    if let Some(msg) = self.sets[ps].nodes[region as usize].driver.retry(token, now) {
                        self.open_round(now, ps, region, msg);
                    }
                }
                Ok(Some(ps))
            }
            Event::WindowCheck { ps, region, inc, deadline } => {
                if self.live(region, inc) {
                    let lease = secs(self.cfg.lease_window_s);
                    let node = &mut self.sets[ps].nodes[region as usize];
                    if node.window_deadline == deadline {
                        self.metrics.lease_windows_total += 1;
                        self.metrics.lease_windows_failed += 1;
                        node.window_deadline = deadline + lease;
                        let next = node.window_deadline;
                        self.queue.push(next, Event::WindowCheck { ps, region, inc, deadline: next });
                    }
                }
                Ok(Some(ps))
            }
            Event::ReplTick { ps, region, inc } => {
                if self.live(region, inc) && self.sets[ps].nodes[region as usize].primary_epoch().is_some() {
                    self.replication_tick(now, ps, region);
                    let next = now + millis(self.cfg.failover.replication_interval_ms);
                    self.queue.push(next, Event::ReplTick { ps, region, inc });
                }
                Ok(Some(ps))
            }
            Event::ClientWrite(ps) => {
                self.client_write(now, ps);
                let next = now + millis(self.cfg.client.write_interval_ms);
                self.queue.push(next, Event::ClientWrite(ps));
                Ok(Some(ps))
            }
            Event::ClientRead(ps) => {
                self.client_read(now, ps);
                let next = now + millis(self.cfg.client.read_interval_ms);
                self.queue.push(next, Event::ClientRead(ps));
                Ok(Some(ps))
            }
            Event::ClientTimeout { ps, write, id, attempt } => {
                self.client_attempt_failed(now, ps, write, id, Some(attempt));
                Ok(Some(ps))
            }
            Event::Power { region, on } => {
                self.set_power(now, region, on);
                Ok(None)
            }
            Event::FaultEdge { start, label } => {
                if start {
                    self.active_faults += 1;
                } else {
                    self.active_faults = self.active_faults.saturating_sub(1);
                }
                self.last_disturbance = now;
                self.tracer.record(now, if start { "fault_start" } else { "fault_end" }, "scheduler", label);
                Ok(None)
            }
            Event::StoreAvailability { store, up } => {
                self.stores.set_available(store, up);
                Ok(None)
            }
            Event::Intent(i) => {
                let intent = self.intents[i].clone();
                self.last_disturbance = now;
                self.tracer.record(now, "intent", "operator", format!("{:?}", intent.kind));
                for ps in 0..self.sets.len() {
                    for r in 0..self.sets[ps].nodes.len() as u16 {
                        self.sets[ps].nodes[r as usize].pending_intents.push(intent.clone());
                        if self.powered[r as usize] {
                            self.expedite(now, ps, r);
                        }
                    }
                }
                Ok(None)
            }
            Event::LivenessCheck => {
                self.check_liveness(now)?;
                self.queue.push(now + secs(self.cfg.lease_window_s), Event::LivenessCheck);
                Ok(None)
            }
        }
    }

    // ---- failover manager updates ----

    fn schedule_update(&mut self, ps: usize, region: u16, at: SimTime) {
        let inc = self.incarnation[region as usize];
        let node = &mut self.sets[ps].nodes[region as usize];
        node.update_token += 1;
        node.next_update_at = at;
        let token = node.update_token;
        self.queue.push(at, Event::Update { ps, region, inc, token });
    }

    /// Brings the next update forward so the failover manager hears about a
    /// local change quickly.
    fn expedite(&mut self, now: SimTime, ps: usize, region: u16) {
        let at = now + millis(self.cfg.failover.expedite_ms);
        let node = &mut self.sets[ps].nodes[region as usize];
        if node.driver.is_active() {
            node.expedite_pending = true;
        } else if node.next_update_at > at {
            self.schedule_update(ps, region, at);
        }
    }

    fn schedule_next_regular(&mut self, now: SimTime, ps: usize, region: u16) {
        let cfg = self.cfg;
        let interval = secs(cfg.proposer_interval_s);
        let node = &mut self.sets[ps].nodes[region as usize];
        let mut at = now
            + match cfg.backoff_policy {
                BackoffPolicy::Adaptive => next_proposal_delay(interval, node.last_clean.unwrap_or(Duration::ZERO)),
                BackoffPolicy::Static => interval + secs(node.rng.random::<f64>() * cfg.scheduler.static_jitter_s),
            };
        if std::mem::take(&mut node.expedite_pending) {
            at = at.min(now + millis(cfg.failover.expedite_ms));
        }
        self.schedule_update(ps, region, at);
    }

    fn start_update(&mut self, now: SimTime, ps: usize, region: u16) {
        let node = &mut self.sets[ps].nodes[region as usize];
        if node.driver.is_active() {
            return;
        }
        node.next_update_at = SimTime::MAX;
        let msg = node.driver.begin(now);
        self.open_round(now, ps, region, msg);
    }

    fn open_round(&mut self, now: SimTime, ps: usize, region: u16, msg: PaxosMessage<Fm>) {
        let inc = self.incarnation[region as usize];
        let token = self.sets[ps].nodes[region as usize].driver.token();
        let timeout = millis(self.cfg.scheduler.round_timeout_ms);
        self.queue.push(now + timeout, Event::RoundTimeout { ps, region, inc, token });
        self.broadcast(now, ps, region, msg);
    }

    fn report(&self, now: SimTime, node: &Node) -> PartitionReport {
        let quiesced = matches!(node.role, LocalRole::Quiesced { .. });
        PartitionReport {
            region: RegionId(node.region),
            healthy: true,
            committed_lsn: node.len(),
            epoch_seen: node.primary_epoch().unwrap_or(node.synced_epoch),
            report_time: now,
            writes_quiesced: quiesced,
        }
    }

    /// Lease changes the write region wants, based on its last learned
    /// state and follower progress.
    fn lease_requests(&self, now: SimTime, node: &Node) -> Vec<LeaseRequest> {
        let Some(state) = node.learned.as_ref().map(|v| &v.payload) else {
            return Vec::new();
        };
        let me = RegionId(node.region);
        if state.write_region != me || node.primary_epoch() != Some(state.epoch) {
            return Vec::new();
        }
        let stale_after = secs(self.cfg.failover.lease_revoke_after_s);
        let mut out = Vec::new();
        for &f in &state.active_leases {
            let stale = node
                .followers
                .get(&f.0)
                .is_none_or(|fo| now - fo.last_ack >= stale_after);
            if stale && request_lease_revocation(state, f).is_ok() {
                out.push(LeaseRequest::Revoke { region: f });
            }
        }
        for &f in &state.priority_list {
            if f == me || state.active_leases.contains(&f) {
                continue;
            }
            let Some(fo) = node.followers.get(&f.0) else { continue };
            if now - fo.last_ack >= stale_after {
                continue;
            }
            let (reference, max_lag) = match self.cfg.consistency {
                Consistency::Strong => (node.gclsn, 0),
                Consistency::Eventual => (node.len(), self.cfg.failover.catch_up_lsns),
            };
            if readd_lease(state, f, fo.acked, reference, max_lag).is_ok() {
                out.push(LeaseRequest::Readd {
                    region: f,
                    acked_lsn: fo.acked,
                    reference_lsn: reference,
                    max_lag,
                });
            }
        }
        out
    }

    fn build_edit(&self, now: SimTime, node: &Node) -> StateEdit {
        StateEdit {
            report: self.report(now, node),
            intents: node.pending_intents.clone(),
            lease_requests: self.lease_requests(now, node),
            phase2_sample: node.pending_sample,
        }
    }

    fn on_paxos_reply(&mut self, now: SimTime, ps: usize, region: u16, msg: PaxosMessage<Fm>) -> Result<(), SimError> {
        let edit = match &msg {
            PaxosMessage::Phase1b(_) => Some(self.build_edit(now, &self.sets[ps].nodes[region as usize])),
            _ => None,
        };
        let params = self.params.clone();
        let set = &mut self.sets[ps];
        let bootstrap = &set.bootstrap;
        let node = &mut set.nodes[region as usize];
        let mut used = false;
        let step = node.driver.on_reply(now, &msg, |current: Option<&RegisterValue<Fm>>| {
            let edit = edit.as_ref()?;
            used = true;
            let base = current.map_or(bootstrap, |v| &v.payload);
            Some(transition(base, edit, now, &params))
        });
        if used {
            let edit = edit.expect("used implies built");
            node.edit_time = now;
            for r in &edit.lease_requests {
                if let LeaseRequest::Readd { region, .. } = r {
                    node.readds_in_flight.insert(region.0);
                    node.ack_set.insert(region.0);
                }
            }
        }
        self.apply_step(now, ps, region, step)
    }

    fn apply_step(&mut self, now: SimTime, ps: usize, region: u16, step: DriverStep<Fm>) -> Result<(), SimError> {
        match step {
            DriverStep::Nothing => {}
            DriverStep::Broadcast(msg) => self.broadcast(now, ps, region, msg),
            DriverStep::Backoff { attempt } => {
                self.metrics.cas_conflicts += 1;
                let cfg = self.cfg;
                if attempt >= cfg.failover.max_rounds_per_update {
                    self.sets[ps].nodes[region as usize].driver.abandon();
                    self.schedule_next_regular(now, ps, region);
                    return Ok(());
                }
                let inc = self.incarnation[region as usize];
                let node = &mut self.sets[ps].nodes[region as usize];
                let stats = node
                    .learned
                    .as_ref()
                    .map(|v| v.payload.scheduler_stats.clone())
                    .unwrap_or_default();
                let delay = backoff_delay(
                    cfg.backoff_policy,
                    attempt,
                    millis(cfg.scheduler.static_delta_ms),
                    &stats,
                    &mut node.rng,
                );
                let token = node.driver.token();
                self.queue.push(now + delay, Event::Retry { ps, region, inc, token });
            }
            DriverStep::Chosen(c) => self.on_learn(now, ps, region, c)?,
        }
        Ok(())
    }

    fn on_learn(&mut self, now: SimTime, ps: usize, region: u16, c: Chosen<Fm>) -> Result<(), SimError> {
        self.record_chosen(now, ps, &c.value)?;
        let lease = secs(self.cfg.lease_window_s);
        let inc = self.incarnation[region as usize];
        let me = RegionId(region);
        let node = &mut self.sets[ps].nodes[region as usize];
        node.pending_sample = Some(c.phase2);
        if c.conflict_free {
            node.last_clean = Some(c.total);
        }
        node.readds_in_flight.clear();
        let state = c.value.payload.clone();
        node.pending_intents.retain(|i| state.intent_outcome(i.id).is_none());
        if state.write_region == me && state.status(me).is_some_and(|s| s.is_write()) {
            node.lease_deadline = node.edit_time + lease;
        }
        self.metrics.lease_windows_total += 1;
        node.window_deadline = now + lease;
        let deadline = node.window_deadline;
        self.queue.push(deadline, Event::WindowCheck { ps, region, inc, deadline });
        node.learned = Some(c.value);

        let auth = node
            .auth_table
            .as_ref()
            .filter(|(e, _)| *e == state.epoch)
            .map(|(_, t)| t.clone());
        let view = ReplicaView {
            role: node.role,
            local_max_lsn: node.len(),
            local_last_epoch: node.last_epoch(),
            authoritative_progress: auth.as_ref(),
        };
        let actions = derive_actions(&state, me, &view);
        let changed = actions.iter().any(|a| *a != ReplicaAction::NoOp);
        for a in actions {
            self.apply_action(now, ps, region, a, &state)?;
        }
        self.refresh_primary(now, ps, region, &state);
        let wants_lease_change = !self.lease_requests(now, &self.sets[ps].nodes[region as usize]).is_empty();
        let node = &self.sets[ps].nodes[region as usize];
        let urgent = changed
            || wants_lease_change
            || state.pending_failover.is_some()
            || !node.pending_intents.is_empty();
        self.schedule_next_regular(now, ps, region);
        if urgent {
            self.expedite(now, ps, region);
        }
        Ok(())
    }

    /// Keeps a primary's follower set and acknowledgement set in line with
    /// the learned state.
    fn refresh_primary(&mut self, now: SimTime, ps: usize, region: u16, state: &Fm) {
        let node = &mut self.sets[ps].nodes[region as usize];
        if node.primary_epoch() != Some(state.epoch) || state.write_region != RegionId(region) {
            return;
        }
        let len = node.len();
        for &r in &state.priority_list {
            if r.0 != region {
                node.followers.entry(r.0).or_insert(Follower {
                    acked: 0,
                    next: len,
                    last_ack: now,
                });
            }
        }
        node.followers.retain(|f, _| state.priority_list.contains(&RegionId(*f)));
        node.ack_set = state.active_leases.iter().map(|r| r.0).collect();
        node.ack_set.extend(node.readds_in_flight.iter().copied());
        self.advance_commit(now, ps, region);
    }

    fn apply_action(&mut self, now: SimTime, ps: usize, region: u16, a: ReplicaAction, state: &Fm) -> Result<(), SimError> {
        let actor = format!("ps{ps}/{}", region_name(region));
        match a {
            ReplicaAction::NoOp => {}
            ReplicaAction::BecomeWritePrimary { epoch } => {
                self.check_zero_loss(now, ps, region)?;
                let inc = self.incarnation[region as usize];
                let node = &mut self.sets[ps].nodes[region as usize];
                let len = node.len();
                node.progress.clamp(len);
                if let Err(e) = node.progress.record(epoch, len) {
                    return Err(self.violation(now, format!("{actor} cannot open epoch {epoch}: {e}")));
                }
                node.role = LocalRole::WritePrimary { epoch };
                node.synced_epoch = epoch;
                node.auth_table = None;
                node.followers.clear();
                node.pending_acks.clear();
                if self.cfg.consistency == Consistency::Eventual {
                    node.gclsn = len;
                }
                self.tracer.record(now, "become_primary", actor, format!("epoch={epoch} lsn={len}"));
                self.on_new_primary(now, ps, region);
                self.refresh_primary(now, ps, region, state);
                self.replication_tick(now, ps, region);
                let next = now + millis(self.cfg.failover.replication_interval_ms);
                self.queue.push(next, Event::ReplTick { ps, region, inc });
            }
            ReplicaAction::QuiesceWrites => {
                let node = &mut self.sets[ps].nodes[region as usize];
                if let Some(epoch) = node.primary_epoch() {
                    node.role = LocalRole::Quiesced { epoch };
                }
                self.tracer.record(now, "quiesce", actor, "");
                self.replication_tick(now, ps, region);
            }
            ReplicaAction::ResumeWrites => {
                let node = &mut self.sets[ps].nodes[region as usize];
                if let Some(epoch) = node.primary_epoch() {
                    node.role = LocalRole::WritePrimary { epoch };
                }
                self.tracer.record(now, "resume", actor, "");
            }
            ReplicaAction::BecomeReadSecondary => {
                let node = &mut self.sets[ps].nodes[region as usize];
                node.role = LocalRole::ReadSecondary;
                node.followers.clear();
                node.ack_set.clear();
                node.pending_acks.clear();
                self.tracer.record(now, "become_secondary", actor, "");
            }
            ReplicaAction::TruncateFalseProgress { to_lsn } => self.truncate(now, ps, region, to_lsn),
            ReplicaAction::FullReseed => self.full_reseed(now, ps, region, None),
        }
        Ok(())
    }

    // ---- replication ----

    fn truncate(&mut self, now: SimTime, ps: usize, region: u16, to: u64) {
        let set = &mut self.sets[ps];
        let node = &mut set.nodes[region as usize];
        if to >= node.len() {
            return;
        }
        for (i, e) in node.log.iter().enumerate().skip(to as usize) {
            set.discarded.insert((e.epoch, i as u64 + 1));
        }
        let span = node.len() - to;
        node.log.truncate(to as usize);
        node.progress.clamp(to);
        self.tracer.record(
            now,
            "truncate",
            format!("ps{ps}/{}", region_name(region)),
            format!("to={to} discarded={span}"),
        );
    }

    fn full_reseed(&mut self, now: SimTime, ps: usize, region: u16, table: Option<&ProgressTable>) {
        let set = &mut self.sets[ps];
        let node = &mut set.nodes[region as usize];
        for (i, e) in node.log.iter().enumerate() {
            let lsn = i as u64 + 1;
            if table.and_then(|t| t.get(e.epoch)).is_none_or(|last| lsn > last) {
                set.discarded.insert((e.epoch, lsn));
            }
        }
        node.log.clear();
        node.progress = ProgressTable::new();
        set.m.full_reseeds += 1;
        self.tracer.record(now, "full_reseed", format!("ps{ps}/{}", region_name(region)), "");
    }

    fn send_batch(&mut self, now: SimTime, ps: usize, region: u16, to: u16) {
        let node = &mut self.sets[ps].nodes[region as usize];
        let Some(epoch) = node.primary_epoch() else { return };
        let len = node.len();
        let Some(f) = node.followers.get_mut(&to) else { return };
        let start = f.next.min(len);
        let end = (start + REPLICATION_BATCH as u64).min(len);
        f.next = end;
        let msg = ReplicateMsg {
            epoch,
            prev_lsn: start,
            entries: node.log[start as usize..end as usize].to_vec(),
            table: node.progress.clone(),
            gclsn: node.gclsn,
            quiesced: matches!(node.role, LocalRole::Quiesced { .. }),
            primary_len: len,
        };
        self.send_to_node(now, ps, Endpoint::Region(region), to, Msg::Replicate(Box::new(msg)));
    }

    /// Resends from each follower's acknowledged position.
    fn replication_tick(&mut self, now: SimTime, ps: usize, region: u16) {
        let node = &mut self.sets[ps].nodes[region as usize];
        let targets: Vec<u16> = node.followers.keys().copied().collect();
        for f in node.followers.values_mut() {
            f.next = f.acked;
        }
        for t in targets {
            self.send_batch(now, ps, region, t);
        }
        if !self.lease_requests(now, &self.sets[ps].nodes[region as usize]).is_empty() {
            self.expedite(now, ps, region);
        }
    }

    fn on_replicate(&mut self, now: SimTime, ps: usize, region: u16, from: u16, m: &ReplicateMsg) {
        let node = &mut self.sets[ps].nodes[region as usize];
        if m.epoch < node.synced_epoch {
            return;
        }
        if let Some(e) = node.primary_epoch() {
            if e >= m.epoch {
                return;
            }
            // A newer primary exists; stop acting as one.
            node.role = LocalRole::ReadSecondary;
            node.followers.clear();
            node.pending_acks.clear();
        }
        if m.epoch > node.synced_epoch {
            if let Some(last) = node.last_epoch() {
                if last < m.epoch {
                    match truncate_false_progress(&m.table, node.len(), last) {
                        Ok(to) => self.truncate(now, ps, region, to),
                        Err(_) => self.full_reseed(now, ps, region, Some(&m.table)),
                    }
                }
            }
            self.sets[ps].nodes[region as usize].synced_epoch = m.epoch;
        }
        let node = &mut self.sets[ps].nodes[region as usize];
        // Messages can arrive out of order; never go back to an older table.
        let fresher = node.table_source <= (m.epoch, m.primary_len);
        if fresher {
            node.table_source = (m.epoch, m.primary_len);
            node.auth_table = Some((m.epoch, m.table.clone()));
        }
        let len = node.len();
        let gap = len < m.prev_lsn;
        if !gap {
            let skip = (len - m.prev_lsn) as usize;
            if skip < m.entries.len() {
                node.log.extend_from_slice(&m.entries[skip..]);
            }
        }
        let len = node.len();
        if let Some((_, t)) = &node.auth_table {
            node.progress = t.clone();
            node.progress.clamp(len);
        }
        node.gclsn = node.gclsn.max(m.gclsn.min(len));
        let caught_up_quiesced = m.quiesced && len >= m.primary_len && node.quiesce_caught_up != Some(m.epoch);
        if caught_up_quiesced {
            node.quiesce_caught_up = Some(m.epoch);
        }
        self.send_to_node(now, ps, Endpoint::Region(region), from, Msg::ReplAck(ReplAck { epoch: m.epoch, len, gap }));
        if caught_up_quiesced {
            self.expedite(now, ps, region);
        }
    }

    fn on_repl_ack(&mut self, now: SimTime, ps: usize, region: u16, from: u16, ack: ReplAck) {
        let ReplAck { epoch, len, gap } = ack;
        let node = &mut self.sets[ps].nodes[region as usize];
        if node.primary_epoch() != Some(epoch) {
            return;
        }
        let my_len = node.len();
        let Some(f) = node.followers.get_mut(&from) else { return };
        f.acked = len;
        f.last_ack = now;
        if gap || f.next < len {
            f.next = len;
        }
        let more = f.next < my_len;
        self.advance_commit(now, ps, region);
        if more {
            self.send_batch(now, ps, region, from);
        }
    }

    /// Recomputes the durable position and acknowledges client writes it
    /// covers.
    fn advance_commit(&mut self, now: SimTime, ps: usize, region: u16) {
        let strong = self.cfg.consistency == Consistency::Strong;
        let node = &mut self.sets[ps].nodes[region as usize];
        let Some(epoch) = node.primary_epoch() else { return };
        let len = node.len();
        let point = if strong {
            node.ack_set
                .iter()
                .map(|f| node.followers.get(f).map_or(0, |fo| fo.acked))
                .fold(len, u64::min)
        } else {
            len
        };
        node.gclsn = node.gclsn.max(point);
        let gclsn = node.gclsn;
        let mut acks = Vec::new();
        while node.pending_acks.front().is_some_and(|&(lsn, _)| lsn <= gclsn) {
            acks.push(node.pending_acks.pop_front().expect("checked"));
        }
        for (lsn, id) in acks {
            self.send_to_client(now, ps, region, Msg::WriteAck { id, epoch, lsn });
        }
    }

    // ---- node message handling ----

    fn on_node_message(&mut self, now: SimTime, ps: usize, region: u16, from: Endpoint, msg: Msg) -> Result<(), SimError> {
        let sender = match from {
            Endpoint::Region(r) => r,
            _ => u16::MAX,
        };
        match msg {
            Msg::Paxos(p) => self.on_paxos_reply(now, ps, region, *p)?,
            Msg::Replicate(m) => self.on_replicate(now, ps, region, sender, &m),
            Msg::ReplAck(ack) => self.on_repl_ack(now, ps, region, sender, ack),
            Msg::Write { id } => {
                let strong = self.cfg.consistency == Consistency::Strong;
                let node = &mut self.sets[ps].nodes[region as usize];
                if !node.accepts_writes(now) {
                    self.send_to_client(now, ps, region, Msg::WriteReject { id });
                    return Ok(());
                }
                let epoch = node.primary_epoch().expect("accepting writes");
                node.log.push(Entry { epoch, write_id: id });
                let lsn = node.len();
                if let Err(e) = node.progress.record(epoch, lsn) {
                    return Err(self.violation(now, format!("primary progress rejected lsn {lsn}: {e}")));
                }
                let followers: Vec<u16> = node
                    .followers
                    .iter()
                    .filter(|(_, f)| f.next + 1 == lsn)
                    .map(|(&r, _)| r)
                    .collect();
                if strong {
                    node.pending_acks.push_back((lsn, id));
                    self.advance_commit(now, ps, region);
                } else {
                    node.gclsn = lsn;
                    self.send_to_client(now, ps, region, Msg::WriteAck { id, epoch, lsn });
                }
                for f in followers {
                    self.send_batch(now, ps, region, f);
                }
            }
            Msg::Read { id, token } => {
                let strong = self.cfg.consistency == Consistency::Strong;
                let node = &self.sets[ps].nodes[region as usize];
                let serving = node.primary_epoch().is_some() && now < node.lease_deadline;
                let point = if strong { node.gclsn.min(node.len()) } else { node.len() };
                let reply = if serving && point >= token {
                    let write_id = point.checked_sub(1).map(|i| node.log[i as usize].write_id);
                    Msg::ReadOk { id, lsn: point, write_id }
                } else {
                    Msg::ReadReject { id }
                };
                self.send_to_client(now, ps, region, reply);
            }
            Msg::WriteAck { .. } | Msg::WriteReject { .. } | Msg::ReadOk { .. } | Msg::ReadReject { .. } => {}
        }
        Ok(())
    }

    // ---- client ----

    fn attempt_order(&self, ps: usize) -> Vec<u16> {
        let mut order = Vec::with_capacity(self.client_order.len() + 1);
        if let Some(c) = self.sets[ps].client.cached {
            order.push(c);
        }
        for &r in &self.client_order {
            if !order.contains(&r) {
                order.push(r);
            }
        }
        order
    }

    fn client_send(&mut self, now: SimTime, ps: usize, write: bool, id: u64) {
        let client = &self.sets[ps].client;
        let op = if write { &client.writes[&id] } else { &client.reads[&id] };
        let region = op.attempts[op.idx];
        let attempt = op.idx;
        let msg = if write { Msg::Write { id } } else { Msg::Read { id, token: op.token } };
        if let Some(at) = self.net.transmit(Endpoint::Client, Endpoint::Region(region), now) {
            let inc = self.incarnation[region as usize];
            self.queue.push(at, Event::ToNode { ps, region, inc, from: Endpoint::Client, msg });
        }
        let timeout = millis(self.cfg.client.request_timeout_ms);
        self.queue.push(now + timeout, Event::ClientTimeout { ps, write, id, attempt });
    }

    fn client_write(&mut self, now: SimTime, ps: usize) {
        let attempts = self.attempt_order(ps);
        let client = &mut self.sets[ps].client;
        client.next_id += 1;
        let id = client.next_id;
        client.writes.insert(id, Op { attempts, idx: 0, token: 0 });
        self.client_send(now, ps, true, id);
    }

    fn client_read(&mut self, now: SimTime, ps: usize) {
        let attempts = self.attempt_order(ps);
        let client = &mut self.sets[ps].client;
        client.next_id += 1;
        let id = client.next_id;
        let token = client.token;
        client.reads.insert(id, Op { attempts, idx: 0, token });
        self.client_send(now, ps, false, id);
    }

    fn client_attempt_failed(&mut self, now: SimTime, ps: usize, write: bool, id: u64, attempt: Option<usize>) {
        let client = &mut self.sets[ps].client;
        let ops = if write { &mut client.writes } else { &mut client.reads };
        let Some(op) = ops.get_mut(&id) else { return };
        if attempt.is_some_and(|a| a != op.idx) {
            return;
        }
        op.idx += 1;
        if op.idx < op.attempts.len() {
            self.client_send(now, ps, write, id);
            return;
        }
        ops.remove(&id);
        if write {
            self.sets[ps].m.unavailable_writes += 1;
            self.tracer.record(now, "write_unavailable", format!("ps{ps}/client"), format!("id={id}"));
        }
    }

    fn on_client_message(&mut self, now: SimTime, ps: usize, from: u16, msg: Msg) -> Result<(), SimError> {
        match msg {
            Msg::WriteAck { id, epoch, lsn } => {
                let set = &mut self.sets[ps];
                if set.client.writes.remove(&id).is_some() {
                    set.client.cached = Some(from);
                    set.acked.push(AckedWrite { id, epoch, lsn });
                    for t in set.tracks.iter_mut() {
                        if t.m.writes_resumed_s.is_none() && id >= t.first_write_id {
                            t.m.writes_resumed_s = Some((now - t.start).as_secs_f64());
                        }
                    }
                }
            }
            Msg::WriteReject { id } => {
                let idx = self.sets[ps].client.writes.get(&id).map(|o| o.idx);
                self.client_attempt_failed(now, ps, true, id, idx);
            }
            Msg::ReadOk { id, lsn, write_id } => {
                let strong = self.cfg.consistency == Consistency::Strong;
                let set = &mut self.sets[ps];
                if set.client.reads.remove(&id).is_some() {
                    if strong && lsn < set.client.token {
                        let what = format!("read of ps{ps} returned position {lsn} after {}", set.client.token);
                        return Err(self.violation(now, what));
                    }
                    set.client.token = set.client.token.max(lsn);
                    set.client.cached = Some(from);
                    set.m.reads_checked += 1;
                    if strong {
                        set.client.observed.push((lsn, write_id));
                    }
                }
            }
            Msg::ReadReject { id } => {
                let idx = self.sets[ps].client.reads.get(&id).map(|o| o.idx);
                self.client_attempt_failed(now, ps, false, id, idx);
            }
            _ => {}
        }
        Ok(())
    }

    // ---- faults ----

    fn set_power(&mut self, now: SimTime, region: u16, on: bool) {
        let r = region as usize;
        self.powered[r] = on;
        self.incarnation[r] += 1;
        self.tracer.record(now, if on { "power_on" } else { "power_off" }, region_name(region), "");
        let restore = self.cfg.faults.iter().find_map(|f| match f {
            FaultConfig::RegionPowerOutage { target, start_s, duration_s }
                if self.cfg.region_index(target) == Some(region)
                    && SimTime::from_secs_f64(*start_s) == now =>
            {
                Some(SimTime::from_secs_f64(start_s + duration_s))
            }
            _ => None,
        });
        for ps in 0..self.sets.len() {
            if on {
                let delay = {
                    let node = &mut self.sets[ps].nodes[r];
                    millis(node.rng.random::<f64>() * self.cfg.failover.expedite_ms)
                };
                self.schedule_update(ps, region, now + delay);
            } else {
                let quorum = self.quorum;
                let set = &mut self.sets[ps];
                set.nodes[r].lose_power(quorum);
                let was_write = set
                    .latest
                    .as_ref()
                    .is_some_and(|(_, s)| s.write_region == RegionId(region));
                let restore = restore.unwrap_or(SimTime::MAX);
                set.tracks.push(OutageTrack {
                    m: OutageMetrics {
                        region,
                        start_s: now.as_secs_f64(),
                        restore_s: restore.as_secs_f64(),
                        was_write_region: was_write,
                        ..Default::default()
                    },
                    start: now,
                    restore,
                    triggered_at: None,
                    first_write_id: set.client.next_id + 1,
                });
            }
        }
    }

    // ---- invariants and metrics ----

    fn record_chosen(&mut self, now: SimTime, ps: usize, value: &RegisterValue<Fm>) -> Result<(), SimError> {
        let d = digest(&value.payload);
        let v = value.cas_version;
        let set = &mut self.sets[ps];
        if let Some(&prev) = set.digests.get(&v) {
            if prev != d {
                return Err(self.violation(now, format!("ps{ps}: two values chosen for version {v}")));
            }
            return Ok(());
        }
        set.digests.insert(v, d);
        while set.digests.len() as u64 > AGREEMENT_WINDOW {
            set.digests.pop_first();
        }
        if set.latest.as_ref().is_some_and(|(lv, _)| *lv >= v) {
            return Ok(());
        }
        let state = &value.payload;
        if let Err(e) = state.check_invariants() {
            return Err(self.violation(now, format!("ps{ps} version {v}: {e}")));
        }
        let prev = set.latest.take();
        if let Some((_, p)) = &prev {
            if state.epoch < p.epoch {
                let what = format!("ps{ps}: epoch fell from {} to {} at version {v}", p.epoch, state.epoch);
                return Err(self.violation(now, what));
            }
        }
        let prev_state = prev.map(|(_, s)| s);
        self.track_state_change(now, ps, prev_state.as_ref(), state);
        self.sets[ps].latest = Some((v, state.clone()));
        Ok(())
    }

    fn track_state_change(&mut self, now: SimTime, ps: usize, prev: Option<&Fm>, state: &Fm) {
        let set = &mut self.sets[ps];
        let prev_epoch = prev.map_or(state.epoch, |p| p.epoch);
        if state.last_failover != prev.and_then(|p| p.last_failover) {
            if let Some(rec) = state.last_failover {
                match rec.kind {
                    FailoverKind::Graceful => set.m.graceful_failovers += 1,
                    FailoverKind::Forced(_) => set.m.ungraceful_failovers += 1,
                }
                for t in set.tracks.iter_mut() {
                    if rec.to.0 == t.m.region && rec.triggered_at >= t.restore && t.m.failback_completed_s.is_none() {
                        t.m.graceful_failback = rec.kind == FailoverKind::Graceful;
                    }
                }
                self.tracer.record(
                    now,
                    "failover",
                    format!("ps{ps}"),
                    format!("{:?} {} -> {} epoch={}", rec.kind, rec.from, rec.to, rec.epoch),
                );
                for t in set.tracks.iter_mut() {
                    if t.m.was_write_region
                        && t.triggered_at.is_none()
                        && rec.from.0 == t.m.region
                        && matches!(rec.kind, FailoverKind::Forced(_))
                        && rec.triggered_at >= t.start
                    {
                        t.triggered_at = Some(rec.triggered_at);
                        t.m.detection_s = Some((rec.triggered_at - t.start).as_secs_f64());
                    }
                }
            }
        }
        if let Some(g) = &state.graceful {
            if prev.and_then(|p| p.graceful.as_ref()).is_none_or(|pg| pg.started_at != g.started_at) {
                set.m.graceful_attempts.push(g.started_at.as_secs_f64());
            }
            for t in set.tracks.iter_mut() {
                if t.m.failback_detection_s.is_none() && g.target.0 == t.m.region && g.started_at >= t.restore {
                    t.m.failback_detection_s = Some((g.started_at - t.restore).as_secs_f64());
                }
            }
        }
        if state.epoch > prev_epoch {
            for t in set.tracks.iter_mut() {
                if now >= t.start && (now < t.restore || t.m.failback_completed_s.is_none()) {
                    t.m.epoch_increments += state.epoch - prev_epoch;
                }
            }
        }
    }

    fn on_new_primary(&mut self, now: SimTime, ps: usize, region: u16) {
        for t in self.sets[ps].tracks.iter_mut() {
            if let Some(trig) = t.triggered_at {
                if t.m.recovery_s.is_none() && region != t.m.region {
                    t.m.recovery_s = Some((now - trig).as_secs_f64());
                }
            }
            if region == t.m.region && now >= t.restore && t.m.failback_completed_s.is_none() {
                t.m.failback_completed_s = Some((now - t.restore).as_secs_f64());
            }
        }
    }

    /// Under strong consistency a new primary must hold every acknowledged
    /// write.
    fn check_zero_loss(&self, now: SimTime, ps: usize, region: u16) -> Result<(), SimError> {
        if self.cfg.consistency != Consistency::Strong {
            return Ok(());
        }
        let set = &self.sets[ps];
        let log = &set.nodes[region as usize].log;
        for a in &set.acked {
            let present = a
                .lsn
                .checked_sub(1)
                .and_then(|i| log.get(i as usize))
                .is_some_and(|e| e.epoch == a.epoch && e.write_id == a.id);
            if !present {
                let what = format!(
                    "ps{ps}: {} promoted without acknowledged write {} at lsn {}",
                    region_name(region),
                    a.id,
                    a.lsn
                );
                return Err(self.violation(now, what));
            }
        }
        Ok(())
    }

    fn check_single_writer(&self, ps: usize, now: SimTime) -> Result<(), SimError> {
        let nodes = &self.sets[ps].nodes;
        let mut writers = 0;
        let mut epochs = BTreeMap::new();
        for n in nodes {
            if !self.powered[n.region as usize] {
                continue;
            }
            if n.accepts_writes(now) {
                writers += 1;
            }
            if let Some(e) = n.primary_epoch() {
                *epochs.entry(e).or_insert(0) += 1;
            }
        }
        if writers > 1 {
            return Err(self.violation(now, format!("ps{ps}: {writers} regions accept writes")));
        }
        if let Some((e, _)) = epochs.iter().find(|(_, &c)| c > 1) {
            return Err(self.violation(now, format!("ps{ps}: two write primaries in epoch {e}")));
        }
        Ok(())
    }

    /// After a quiet period of several lease windows with every region up,
    /// each partition set must accept writes.
    fn check_liveness(&self, now: SimTime) -> Result<(), SimError> {
        let k = self.cfg.failover.liveness_windows;
        let quiet = secs(self.cfg.lease_window_s).saturating_mul(k);
        if self.active_faults > 0 || now - self.last_disturbance < quiet || self.powered.iter().any(|p| !p) {
            return Ok(());
        }
        for (ps, set) in self.sets.iter().enumerate() {
            let enabled = set.latest.as_ref().is_some_and(|(_, s)| s.writes_enabled());
            let accepting = set.nodes.iter().any(|n| n.accepts_writes(now));
            if !(enabled && accepting) {
                let what = format!("ps{ps}: writes not enabled after {k} stable lease windows");
                return Err(self.violation(now, what));
            }
        }
        Ok(())
    }

    fn finish(mut self, horizon: SimTime) -> Result<RunOutput, SimError> {
        let strong = self.cfg.consistency == Consistency::Strong;
        for ps in 0..self.sets.len() {
            let set = &mut self.sets[ps];
            let writer = set
                .latest
                .as_ref()
                .map_or(set.bootstrap.write_region, |(_, s)| s.write_region);
            let log = &set.nodes[writer.0 as usize].log;
            let present: HashSet<(u64, u64)> = log.iter().map(|e| (e.epoch, e.write_id)).collect();
            let surviving = set.acked.iter().filter(|a| present.contains(&(a.epoch, a.id))).count() as u64;
            set.m.acknowledged_writes = set.acked.len() as u64;
            set.m.surviving_writes = surviving;
            set.m.lost_writes = set.m.acknowledged_writes - surviving;
            set.m.false_progress_span = set.discarded.len() as u64;
            set.m.final_epoch = set.latest.as_ref().map_or(1, |(_, s)| s.epoch);
            set.m.outages = set.tracks.iter().map(|t| t.m.clone()).collect();
            if strong {
                let lost = set.m.lost_writes;
                let bad_read = set
                    .client
                    .observed
                    .iter()
                    .find(|&&(lsn, wid)| {
                        let actual = lsn.checked_sub(1).and_then(|i| log.get(i as usize)).map(|e| e.write_id);
                        actual != wid
                    })
                    .map(|&(lsn, _)| lsn);
                if lost > 0 {
                    return Err(self.violation(horizon, format!("ps{ps}: {lost} acknowledged writes lost")));
                }
                if let Some(lsn) = bad_read {
                    return Err(self.violation(horizon, format!("ps{ps}: read at position {lsn} was not durable")));
                }
            }
        }
        let sets = std::mem::take(&mut self.sets);
        for set in sets {
            self.metrics.absorb(set.m);
        }
        self.metrics.finish_rates();
        Ok(RunOutput {
            metrics: self.metrics,
            trace: self.tracer.into_records(),
        })
    }
}
