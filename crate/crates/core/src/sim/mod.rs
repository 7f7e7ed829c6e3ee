//! Deterministic discrete-event MANET engine.
//!
//! Times are milliseconds. Every node owns a FIFO transmit queue served at a
//! fixed rate; a transmission reaches its receivers after a fixed
//! propagation delay. Links follow the disc model evaluated at the instant a
//! transmission completes.

pub mod event;
pub mod log;
pub mod mobility;
pub mod packet;
pub mod partition;
pub mod radio;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use crate::config::{Protocol, ScenarioConfig, SessionSpec};
use crate::error::ConfigError;
use crate::metrics::{finalize, MetricsReport, RawCounters};
use crate::routing::{select_routes, DiscoveryState, Edge, Route, RouteCache, RreqAction, SessionState, SwitchReason, TransitView};
use crate::sleep::{EdgeSleepTable, SleepBudget};
use crate::slreq::{self, SlReqInput};
use crate::stats::{DebitOutcome, EnergyAccount, NanoJoules, NeighborLedger, ServiceTracker};
use crate::NodeId;

use event::EventQueue;
use log::{Cause, DropReason, LogEntry, LogRecord, PacketKind, ShotItem};
use mobility::{Arena, Point, Waypoint};
use packet::{towards_source, Body, DataPacket, Outgoing, Packet};

pub use log::{read_jsonl, write_jsonl};

const TRAFFIC_STREAM: u64 = 1;
const RANGE_STREAM: u64 = 2;
const MOBILITY_STREAM_BASE: u64 = 1000;
/// Repeated failures on one edge for one session within this span count once.
const BREAK_DEDUP_MS: f64 = 1000.0;

#[derive(Debug)]
enum Event {
    MobilityTick,
    Partition,
    Emit { session: u32, seq: u64 },
    ServiceDone { node: NodeId },
    Deliver { to: NodeId, from: NodeId, packet: Packet },
    CollectDeadline { node: NodeId, src: NodeId, bid: u64, cause: Option<Cause> },
    DiscoveryTimeout { node: NodeId, dst: NodeId, bid: u64 },
    SleepCheck { node: NodeId },
    SleepExpiry { granter: NodeId },
    CacheRetry { node: NodeId, dst: NodeId },
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    bid: u64,
    attempt: u32,
    cause: Cause,
}

#[derive(Debug, Default)]
struct SourceState {
    cache: RouteCache,
    buffer: VecDeque<DataPacket>,
    pending: Option<Pending>,
    holdoff_until: f64,
    retry_at: Option<f64>,
    installed_at: f64,
}

struct Node {
    waypoint: Waypoint,
    mob_rng: ChaCha8Rng,
    range: f64,
    energy: EnergyAccount,
    alive: bool,
    queue: VecDeque<Outgoing>,
    in_service: Option<Outgoing>,
    held: BTreeMap<NodeId, Vec<Outgoing>>,
    ledger: NeighborLedger,
    service: ServiceTracker,
    budget: SleepBudget,
    edge_sleep: EdgeSleepTable,
    /// Granters that put this node to sleep, with the end of each nap.
    napping_from: BTreeMap<NodeId, f64>,
    /// Granted nap lengths per request shot of this node.
    shot_grants: BTreeMap<u32, Vec<f64>>,
    discovery: DiscoveryState,
    sources: BTreeMap<NodeId, SourceState>,
    transit: BTreeMap<u32, TransitView>,
    break_seen: BTreeMap<(u32, NodeId), f64>,
    armed: bool,
    next_bid: u64,
    forwarded: u64,
}

/// End-of-run state of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: NodeId,
    pub alive: bool,
    pub consumed_j: f64,
    pub residual_ratio: f64,
    /// Data packets forwarded on behalf of uplink neighbors.
    pub forwarded: u64,
    pub sleep_shots: u32,
    /// Per shot with at least one grant: L minus the longest granted nap.
    pub lost_sleep_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub log: Vec<LogRecord>,
    /// SHA-256 over every node position at every mobility tick.
    pub mobility_hash: String,
    /// SHA-256 over every scheduled CBR emission.
    pub traffic_hash: String,
    pub sessions: Vec<SessionState>,
    pub nodes: Vec<NodeSummary>,
}

impl RunOutput {
    pub fn log_jsonl(&self) -> String {
        let mut buf = Vec::new();
        write_jsonl(&self.log, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the session table: explicit sessions verbatim, otherwise random
/// distinct endpoints and start times from the traffic stream.
pub fn session_specs(cfg: &ScenarioConfig) -> Vec<SessionSpec> {
    if !cfg.traffic.explicit.is_empty() {
        return cfg.traffic.explicit.clone();
    }
    let mut rng = stream_rng(cfg.run.seed, TRAFFIC_STREAM);
    let n = cfg.nodes.count as u32;
    (0..cfg.traffic.sessions)
        .map(|_| {
            let src = rng.random_range(0..n);
            let dst = (src + rng.random_range(1..n)) % n;
            let start_s = if cfg.traffic.start_max_s > cfg.traffic.start_min_s {
                rng.random_range(cfg.traffic.start_min_s..=cfg.traffic.start_max_s)
            } else {
                cfg.traffic.start_min_s
            };
            SessionSpec { src, dst, rate_pps: cfg.traffic.rate_pps, packets: cfg.traffic.packets_per_session, start_s }
        })
        .collect()
}

pub struct Simulator {
    cfg: ScenarioConfig,
    fep: bool,
    arena: Arena,
    end_ms: f64,
    now: f64,
    seq: u64,
    queue: EventQueue<Event>,
    nodes: Vec<Node>,
    specs: Vec<SessionSpec>,
    sessions: Vec<SessionState>,
    counters: RawCounters,
    record: bool,
    log: Vec<LogRecord>,
    mobility_hash: Sha256,
    traffic_hash: Sha256,
    data_tx_nj: u64,
    data_rx_nj: u64,
    idle_nj: u64,
}

impl Simulator {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let fep = cfg.run.protocol == Protocol::Fep;
        let arena = Arena { width: cfg.arena.width_m, height: cfg.arena.height_m };
        let capacity = NanoJoules::from_joules(cfg.energy.capacity_j);
        let mut range_rng = stream_rng(cfg.run.seed, RANGE_STREAM);
        let nodes = (0..cfg.nodes.count as u64)
            .map(|id| {
                let mut mob_rng = stream_rng(cfg.run.seed, MOBILITY_STREAM_BASE + id);
                let waypoint = Waypoint::start(&mut mob_rng, arena, cfg.nodes.speed_min_mps, cfg.nodes.speed_max_mps);
                let range = if cfg.nodes.range_max_m > cfg.nodes.range_min_m {
                    range_rng.random_range(cfg.nodes.range_min_m..=cfg.nodes.range_max_m)
                } else {
                    cfg.nodes.range_min_m
                };
                Node {
                    waypoint,
                    mob_rng,
                    range,
                    energy: EnergyAccount::new(capacity),
                    alive: true,
                    queue: VecDeque::new(),
                    in_service: None,
                    held: BTreeMap::new(),
                    ledger: NeighborLedger::new(cfg.estimators.rate_window_s),
                    service: ServiceTracker::new(cfg.estimators.ewma_alpha),
                    budget: SleepBudget::new(cfg.fep.sleep_budget),
                    edge_sleep: EdgeSleepTable::new(),
                    napping_from: BTreeMap::new(),
                    shot_grants: BTreeMap::new(),
                    discovery: DiscoveryState::new(),
                    sources: BTreeMap::new(),
                    transit: BTreeMap::new(),
                    break_seen: BTreeMap::new(),
                    armed: false,
                    next_bid: 0,
                    forwarded: 0,
                }
            })
            .collect();
        let specs = session_specs(&cfg);
        let sessions = specs
            .iter()
            .enumerate()
            .map(|(i, s)| SessionState::new(i as u32, s.src, s.dst, s.packets))
            .collect();

        let mut queue = EventQueue::new();
        queue.push(0.0, Event::Partition);
        queue.push(cfg.nodes.mobility_tick_ms, Event::MobilityTick);
        for (i, s) in specs.iter().enumerate() {
            if s.packets > 0 {
                queue.push(s.start_s * 1000.0, Event::Emit { session: i as u32, seq: 0 });
            }
        }
        if fep {
            for id in 0..cfg.nodes.count as NodeId {
                queue.push(cfg.fep.check_period_ms, Event::SleepCheck { node: id });
            }
        }

        Ok(Self {
            fep,
            arena,
            end_ms: cfg.run.sim_time_s * 1000.0,
            now: 0.0,
            seq: 0,
            queue,
            nodes,
            specs,
            sessions,
            counters: RawCounters::default(),
            record: false,
            log: Vec::new(),
            mobility_hash: Sha256::new(),
            traffic_hash: Sha256::new(),
            data_tx_nj: NanoJoules::from_millijoules(cfg.energy.data_tx_mj).0,
            data_rx_nj: NanoJoules::from_millijoules(cfg.energy.data_rx_mj).0,
            idle_nj: NanoJoules::from_millijoules(cfg.energy.idle_mj_per_tick).0,
            cfg,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// Enables the per-event log returned in [`RunOutput::log`].
    pub fn record_log(&mut self, on: bool) {
        self.record = on;
    }

    /// Pins nodes to fixed positions. Combine with zero speeds for static fixtures.
    pub fn place_nodes(&mut self, positions: &[Point]) {
        for (node, &p) in self.nodes.iter_mut().zip(positions) {
            node.waypoint.position = p;
            node.waypoint.target = p;
        }
    }

    /// Starts a node with part of its battery already spent.
    pub fn preset_consumed(&mut self, node: NodeId, joules: f64) {
        let n = &mut self.nodes[node as usize];
        n.energy = EnergyAccount::with_consumed(n.energy.capacity(), NanoJoules::from_joules(joules));
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn positions(&self) -> Vec<Point> {
        self.nodes.iter().map(|n| n.waypoint.position).collect()
    }

    pub fn ranges(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.range).collect()
    }

    pub fn alive(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.alive).collect()
    }

    pub fn residual_ratios(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.energy.residual_ratio()).collect()
    }

    pub fn session_states(&self) -> &[SessionState] {
        &self.sessions
    }

    pub fn counters(&self) -> &RawCounters {
        &self.counters
    }

    /// Data packets currently queued, held, buffered or on the air, per session.
    pub fn in_flight_data(&self) -> BTreeMap<u32, u64> {
        let mut out: BTreeMap<u32, u64> = BTreeMap::new();
        let mut add = |d: &DataPacket| *out.entry(d.session).or_default() += 1;
        for n in &self.nodes {
            let queued = n.queue.iter().chain(n.in_service.iter()).chain(n.held.values().flatten());
            for o in queued {
                if let Some(d) = o.packet.data() {
                    add(d);
                }
            }
            for st in n.sources.values() {
                st.buffer.iter().for_each(&mut add);
            }
        }
        for e in self.queue.iter() {
            if let Event::Deliver { packet, .. } = e {
                if let Some(d) = packet.data() {
                    add(d);
                }
            }
        }
        out
    }

    /// Executes every event scheduled at or before `t_ms` (capped at the run end).
    /// Returns false once the run is over.
    pub fn run_until(&mut self, t_ms: f64) -> bool {
        let limit = t_ms.min(self.end_ms);
        while let Some(t) = self.queue.peek_time() {
            if t > limit {
                break;
            }
            let (t, seq, ev) = self.queue.pop().expect("peeked");
            debug_assert!(t >= self.now);
            self.now = t;
            self.seq = seq;
            self.handle(ev);
        }
        self.now = self.now.max(limit);
        self.queue.peek_time().is_some_and(|t| t <= self.end_ms)
    }

    pub fn run(mut self) -> RunOutput {
        self.run_until(self.end_ms);
        self.finish()
    }

    pub fn finish(self) -> RunOutput {
        let mut raw = self.counters.clone();
        let consumed: u64 = self.nodes.iter().map(|n| n.energy.consumed().0).sum();
        raw.energy_consumed_j = NanoJoules(consumed).joules();
        let max_sleep = self.cfg.fep.max_sleep_ms;
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeSummary {
                id: i as NodeId,
                alive: n.alive,
                consumed_j: n.energy.consumed().joules(),
                residual_ratio: n.energy.residual_ratio(),
                forwarded: n.forwarded,
                sleep_shots: n.budget.used,
                lost_sleep_ms: n
                    .shot_grants
                    .values()
                    .map(|g| crate::sleep::lost_sleep(g, max_sleep))
                    .sum(),
            })
            .collect();
        let report = finalize(raw, self.cfg.run.protocol, self.cfg.run.seed, self.cfg.nodes.count, self.sessions.len());
        RunOutput {
            report,
            log: self.log,
            mobility_hash: hex(&self.mobility_hash.finalize()),
            traffic_hash: hex(&self.traffic_hash.finalize()),
            sessions: self.sessions,
            nodes,
        }
    }

    // ---- plumbing -------------------------------------------------------

    fn emit(&mut self, node: Option<NodeId>, entry: LogEntry) {
        if self.record {
            self.log.push(LogRecord { time: self.now, seq: self.seq, node, entry });
        }
    }

    fn schedule(&mut self, at: f64, ev: Event) {
        self.queue.push(at, ev);
    }

    fn link(&self, a: NodeId, b: NodeId) -> bool {
        let (na, nb) = (&self.nodes[a as usize], &self.nodes[b as usize]);
        na.alive && nb.alive && radio::link_up(na.waypoint.position, na.range, nb.waypoint.position, nb.range)
    }

    fn scaled(&self, base: u64, bytes: u32) -> u64 {
        let d = self.cfg.packets.data_bytes as u128;
        ((base as u128 * bytes as u128 + d / 2) / d) as u64
    }

    fn data_bytes(&self) -> u32 {
        self.cfg.packets.data_bytes + if self.fep { self.cfg.packets.fep_metadata_bytes } else { 0 }
    }

    fn debit(&mut self, id: NodeId, nj: u64) {
        let outcome = self.nodes[id as usize].energy.debit_nj(NanoJoules(nj));
        match outcome {
            DebitOutcome::Died => self.kill(id),
            DebitOutcome::Alive => self.flag_check(id),
            DebitOutcome::AlreadyDead => {}
        }
    }

    fn drop_data(&mut self, node: NodeId, d: &DataPacket, reason: DropReason) {
        self.counters.data_dropped += 1;
        self.sessions[d.session as usize].dropped += 1;
        self.emit(Some(node), LogEntry::DataDropped { session: d.session, seq: d.seq, reason });
    }

    fn kill(&mut self, id: NodeId) {
        let n = &mut self.nodes[id as usize];
        n.alive = false;
        let mut lost: Vec<DataPacket> = Vec::new();
        for o in n.queue.drain(..).chain(n.in_service.take()).chain(std::mem::take(&mut n.held).into_values().flatten()) {
            if let Body::Data(d) = o.packet.body {
                lost.push(d);
            }
        }
        for st in n.sources.values_mut() {
            lost.extend(st.buffer.drain(..));
        }
        n.edge_sleep.clear();
        self.counters.deaths += 1;
        self.emit(Some(id), LogEntry::Death);
        for d in &lost {
            self.drop_data(id, d, DropReason::NodeDeath);
        }
    }

    fn enqueue(&mut self, id: NodeId, out: Outgoing) {
        let limit = self.cfg.radio.queue_limit;
        let n = &self.nodes[id as usize];
        let refused = if !n.alive {
            Some(DropReason::NodeDeath)
        } else if n.queue.len() >= limit {
            Some(DropReason::QueueFull)
        } else {
            None
        };
        if let Some(reason) = refused {
            if let Some(d) = out.packet.data() {
                let d = d.clone();
                self.drop_data(id, &d, reason);
            }
            return;
        }
        self.nodes[id as usize].queue.push_back(out);
        if self.nodes[id as usize].in_service.is_none() {
            self.start_next(id);
        }
    }

    fn hold(&mut self, id: NodeId, sleeper: NodeId, out: Outgoing) {
        if let Some(d) = out.packet.data() {
            let (session, seq) = (d.session, d.seq);
            self.emit(Some(id), LogEntry::SleepHold { session, seq, sleeper });
        }
        self.nodes[id as usize].held.entry(sleeper).or_default().push(out);
    }

    fn suspended_data_target(&self, id: NodeId, out: &Outgoing) -> Option<NodeId> {
        match (out.to, &out.packet.body) {
            (Some(to), Body::Data(_)) if self.nodes[id as usize].edge_sleep.is_asleep(to, self.now) => Some(to),
            _ => None,
        }
    }

    fn start_next(&mut self, id: NodeId) {
        while let Some(out) = self.nodes[id as usize].queue.pop_front() {
            if let Some(sleeper) = self.suspended_data_target(id, &out) {
                self.hold(id, sleeper, out);
                continue;
            }
            self.nodes[id as usize].in_service = Some(out);
            let at = self.now + 1000.0 / self.cfg.radio.service_rate_pps;
            self.schedule(at, Event::ServiceDone { node: id });
            return;
        }
    }

    // ---- event dispatch -------------------------------------------------

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::MobilityTick => self.on_mobility_tick(),
            Event::Partition => self.on_partition(),
            Event::Emit { session, seq } => self.on_emit(session, seq),
            Event::ServiceDone { node } => self.on_service_done(node),
            Event::Deliver { to, from, packet } => self.on_deliver(to, from, packet),
            Event::CollectDeadline { node, src, bid, cause } => self.on_collect_deadline(node, src, bid, cause),
            Event::DiscoveryTimeout { node, dst, bid } => self.on_discovery_timeout(node, dst, bid),
            Event::SleepCheck { node } => {
                if self.nodes[node as usize].alive {
                    self.try_shot(node, true);
                    let at = self.now + self.cfg.fep.check_period_ms;
                    self.schedule(at, Event::SleepCheck { node });
                }
            }
            Event::SleepExpiry { granter } => self.on_sleep_expiry(granter),
            Event::CacheRetry { node, dst } => self.on_cache_retry(node, dst),
        }
    }

    fn on_mobility_tick(&mut self) {
        let tick = self.cfg.nodes.mobility_tick_ms;
        let (vmin, vmax) = (self.cfg.nodes.speed_min_mps, self.cfg.nodes.speed_max_mps);
        let arena = self.arena;
        for n in &mut self.nodes {
            n.waypoint.advance(tick, &mut n.mob_rng, arena, vmin, vmax);
            self.mobility_hash.update(n.waypoint.position.x.to_le_bytes());
            self.mobility_hash.update(n.waypoint.position.y.to_le_bytes());
        }
        self.emit(None, LogEntry::IdleTick);
        for id in 0..self.nodes.len() as NodeId {
            if self.nodes[id as usize].alive {
                self.debit(id, self.idle_nj);
            }
        }
        self.schedule(self.now + tick, Event::MobilityTick);
    }

    fn on_partition(&mut self) {
        let alive: Vec<NodeId> = (0..self.nodes.len() as NodeId).filter(|&i| self.nodes[i as usize].alive).collect();
        let mut edges = Vec::new();
        for (i, &a) in alive.iter().enumerate() {
            for (j, &b) in alive.iter().enumerate().skip(i + 1) {
                if self.link(a, b) {
                    edges.push((i, j));
                }
            }
        }
        let components = partition::component_count(alive.len(), edges) as u64;
        self.counters.max_partitions = self.counters.max_partitions.max(components);
        self.emit(None, LogEntry::Partition { components });
        let at = self.now + self.cfg.sampling.partition_period_s * 1000.0;
        self.schedule(at, Event::Partition);
    }

    fn on_emit(&mut self, session: u32, seq: u64) {
        let spec = self.specs[session as usize].clone();
        self.traffic_hash.update(session.to_le_bytes());
        self.traffic_hash.update(seq.to_le_bytes());
        self.traffic_hash.update(self.now.to_bits().to_le_bytes());
        if seq + 1 < spec.packets {
            let at = spec.start_s * 1000.0 + (seq + 1) as f64 * 1000.0 / spec.rate_pps;
            self.schedule(at, Event::Emit { session, seq: seq + 1 });
        }
        if !self.nodes[spec.src as usize].alive {
            return;
        }
        self.counters.data_sent += 1;
        self.sessions[session as usize].sent += 1;
        self.emit(Some(spec.src), LogEntry::DataSent { session, seq });
        let d = DataPacket {
            session,
            seq,
            src: spec.src,
            dst: spec.dst,
            route: Arc::new(Route { hops: Vec::new(), grade: slreq::FuzzyGrade::A1 }),
            alternatives: Arc::new(Vec::new()),
            total: spec.packets,
            remaining: spec.packets - seq - 1,
            created: self.now,
        };
        self.source_send(spec.src, d);
    }

    fn on_service_done(&mut self, id: NodeId) {
        let Some(out) = self.nodes[id as usize].in_service.take() else { return };
        if !self.nodes[id as usize].alive {
            return;
        }
        if let Some(sleeper) = self.suspended_data_target(id, &out) {
            self.hold(id, sleeper, out);
            self.start_next(id);
            return;
        }
        let kind = out.packet.kind;
        let bytes = out.packet.bytes;
        self.counters.messages += 1;
        if kind.is_control() {
            self.counters.control_messages += 1;
        }
        if kind == PacketKind::Rreq {
            self.counters.rreq_count += 1;
        }
        if out.packet.cause == Some(Cause::BreakRecovery) {
            self.counters.repair_messages += 1;
        }
        self.emit(Some(id), LogEntry::Tx { packet: kind, bytes, to: out.to, cause: out.packet.cause });
        if out.uplink.is_some() {
            let sojourn_ms = self.now - out.arrived;
            self.nodes[id as usize].service.on_service(sojourn_ms);
            self.emit(Some(id), LogEntry::Serviced { sojourn_ms });
        }
        let prop = self.cfg.radio.propagation_ms;
        match out.to {
            None => {
                for j in 0..self.nodes.len() as NodeId {
                    if j != id && self.link(id, j) {
                        self.schedule(self.now + prop, Event::Deliver { to: j, from: id, packet: out.packet.clone() });
                    }
                }
            }
            Some(to) => {
                if self.link(id, to) {
                    if let Body::Data(d) = &out.packet.body {
                        let session = d.session;
                        if let Some(v) = self.nodes[id as usize].transit.get_mut(&session) {
                            *v.forwarded_to.entry(to).or_default() += 1;
                        }
                        if let Some(u) = out.uplink {
                            let n = &mut self.nodes[id as usize];
                            n.ledger.record_forwarded(u).expect("forwarded packet was recorded on arrival");
                            n.forwarded += 1;
                            self.emit(Some(id), LogEntry::Forwarded { uplink: u });
                        }
                    }
                    self.schedule(self.now + prop, Event::Deliver { to, from: id, packet: out.packet.clone() });
                } else if let Body::Data(d) = out.packet.body.clone() {
                    self.on_data_break(id, to, d);
                }
            }
        }
        let cost = self.scaled(self.data_tx_nj, bytes);
        self.debit(id, cost);
        if self.nodes[id as usize].alive {
            self.start_next(id);
        }
    }

    fn on_deliver(&mut self, to: NodeId, from: NodeId, packet: Packet) {
        if !self.nodes[to as usize].alive {
            if let Some(d) = packet.data() {
                let d = d.clone();
                self.drop_data(to, &d, DropReason::NodeDeath);
            }
            return;
        }
        self.emit(Some(to), LogEntry::Rx { packet: packet.kind, bytes: packet.bytes, from });
        let cost = self.scaled(self.data_rx_nj, packet.bytes);
        self.debit(to, cost);
        if !self.nodes[to as usize].alive {
            if let Some(d) = packet.data() {
                let d = d.clone();
                self.drop_data(to, &d, DropReason::NodeDeath);
            }
            return;
        }
        let cause = packet.cause;
        match packet.body {
            Body::Rreq { src, dst, bid, path } => self.on_rreq(to, from, src, dst, bid, path, cause),
            Body::Rrep { src, dst, bid, path, routes } => self.on_rrep(to, src, dst, bid, path, routes, cause),
            Body::Rerr { src, dst, edge, path } => {
                if to == src {
                    self.source_break(src, dst, edge);
                } else if let Some(next) = towards_source(&path, to) {
                    let bytes = self.cfg.packets.route_error;
                    self.send_control(to, next, PacketKind::Rerr, bytes, cause, Body::Rerr { src, dst, edge, path });
                }
            }
            Body::Notice { src, dst, edge, until, path } => {
                if to == src {
                    self.source_notice(src, dst, edge, until);
                } else if let Some(next) = towards_source(&path, to) {
                    let bytes = self.cfg.packets.switch_notice;
                    let body = Body::Notice { src, dst, edge, until, path };
                    self.send_control(to, next, PacketKind::SwitchNotice, bytes, cause, body);
                }
            }
            Body::SleepRequest { shot, items, uplink_taus } => {
                if let Some(item) = items.iter().find(|i| i.addressee == to) {
                    self.on_sleep_request(to, from, shot, item.clone(), uplink_taus);
                }
            }
            Body::SleepReply { shot, grant } => {
                if let Some((duration, until)) = grant {
                    let n = &mut self.nodes[to as usize];
                    let slot = n.napping_from.entry(from).or_insert(until);
                    *slot = slot.max(until);
                    n.shot_grants.entry(shot).or_default().push(duration);
                }
            }
            Body::Data(d) => self.on_data(to, from, d),
        }
    }

    fn send_control(&mut self, from: NodeId, to: NodeId, kind: PacketKind, bytes: u32, cause: Option<Cause>, body: Body) {
        let packet = Packet { kind, bytes, cause, body };
        self.enqueue(from, Outgoing { to: Some(to), packet, uplink: None, arrived: self.now });
    }

    fn broadcast(&mut self, from: NodeId, kind: PacketKind, bytes: u32, cause: Option<Cause>, body: Body) {
        let packet = Packet { kind, bytes, cause, body };
        self.enqueue(from, Outgoing { to: None, packet, uplink: None, arrived: self.now });
    }

    // ---- data plane -----------------------------------------------------

    fn note_transit(&mut self, id: NodeId, d: &DataPacket) {
        let now = self.now;
        let v = self.nodes[id as usize].transit.entry(d.session).or_insert_with(|| TransitView {
            route: d.route.clone(),
            alternatives: d.alternatives.clone(),
            remaining: d.remaining,
            last_seen: now,
            forwarded_to: BTreeMap::new(),
        });
        v.route = d.route.clone();
        v.alternatives = d.alternatives.clone();
        v.remaining = d.remaining;
        v.last_seen = now;
    }

    fn on_data(&mut self, id: NodeId, from: NodeId, d: DataPacket) {
        if id == d.dst {
            let delay = self.now - d.created;
            self.counters.data_delivered += 1;
            self.counters.total_delay_ms += delay;
            let s = &mut self.sessions[d.session as usize];
            s.delivered += 1;
            s.delay_sum_ms += delay;
            self.emit(Some(id), LogEntry::DataDelivered { session: d.session, seq: d.seq, delay_ms: delay });
            return;
        }
        let now = self.now;
        let n = &mut self.nodes[id as usize];
        n.ledger.record_arrival(from, now);
        n.service.on_arrival(now);
        self.emit(Some(id), LogEntry::Arrival { from });
        self.note_transit(id, &d);
        let next = d.route.next_hop(id).expect("data reaches only nodes on its route");
        let bytes = self.data_bytes();
        let packet = Packet { kind: PacketKind::Data, bytes, cause: None, body: Body::Data(d) };
        self.enqueue(id, Outgoing { to: Some(next), packet, uplink: Some(from), arrived: now });
        self.flag_check(id);
    }

    fn on_data_break(&mut self, id: NodeId, to: NodeId, d: DataPacket) {
        self.drop_data(id, &d, DropReason::LinkBreak);
        let key = (d.session, to);
        let now = self.now;
        let n = &mut self.nodes[id as usize];
        if n.break_seen.get(&key).is_some_and(|&t| now - t < BREAK_DEDUP_MS) {
            return;
        }
        n.break_seen.insert(key, now);
        self.counters.link_breaks += 1;
        self.emit(Some(id), LogEntry::LinkBreak { session: d.session, to });
        let edge = (id, to);
        if id == d.src {
            self.source_break(id, d.dst, edge);
        } else if let Some(prev) = d.route.prev_hop(id) {
            let bytes = self.cfg.packets.route_error;
            let body = Body::Rerr { src: d.src, dst: d.dst, edge, path: Arc::new(d.route.hops.clone()) };
            self.send_control(id, prev, PacketKind::Rerr, bytes, Some(Cause::BreakRecovery), body);
        }
    }

    fn source_send(&mut self, src: NodeId, mut d: DataPacket) {
        let now = self.now;
        let fep = self.fep;
        let cap = self.cfg.routing.source_buffer;
        let st = self.nodes[src as usize].sources.entry(d.dst).or_default();
        st.cache.expire(now);
        if let Some(route) = st.cache.current(now).cloned() {
            d.route = Arc::new(route);
            d.alternatives = Arc::new(if fep { st.cache.alternatives() } else { Vec::new() });
            self.transmit_from_source(src, d);
            return;
        }
        if now < st.holdoff_until {
            self.drop_data(src, &d, DropReason::NoRoute);
            return;
        }
        if st.buffer.len() >= cap {
            self.drop_data(src, &d, DropReason::BufferFull);
            return;
        }
        let dst = d.dst;
        st.buffer.push_back(d);
        self.seek_route(src, dst);
    }

    fn transmit_from_source(&mut self, src: NodeId, d: DataPacket) {
        self.note_transit(src, &d);
        let next = d.route.next_hop(src).expect("route starts at its source");
        let bytes = self.data_bytes();
        let packet = Packet { kind: PacketKind::Data, bytes, cause: None, body: Body::Data(d) };
        self.enqueue(src, Outgoing { to: Some(next), packet, uplink: None, arrived: self.now });
    }

    /// Sends buffered packets while an eligible route exists.
    fn flush(&mut self, src: NodeId, dst: NodeId) {
        loop {
            let now = self.now;
            let st = self.nodes[src as usize].sources.get_mut(&dst).expect("source state exists");
            if st.buffer.is_empty() || st.cache.current(now).is_none() {
                return;
            }
            let d = st.buffer.pop_front().expect("non-empty");
            self.source_send(src, d);
        }
    }

    /// No eligible route: wait for a suspension to lapse if that unblocks a
    /// cached route, otherwise discover.
    fn seek_route(&mut self, src: NodeId, dst: NodeId) {
        let now = self.now;
        let st = self.nodes[src as usize].sources.get_mut(&dst).expect("source state exists");
        if st.pending.is_some() {
            return;
        }
        if let Some(t) = st.cache.next_unblock(now) {
            if st.retry_at.is_none_or(|r| r > t) {
                st.retry_at = Some(t);
                self.schedule(t, Event::CacheRetry { node: src, dst });
            }
            return;
        }
        let cause = if st.cache.is_empty() { Cause::Initial } else { Cause::BreakRecovery };
        self.start_discovery(src, dst, cause);
    }

    fn on_cache_retry(&mut self, src: NodeId, dst: NodeId) {
        if !self.nodes[src as usize].alive {
            return;
        }
        let now = self.now;
        let st = self.nodes[src as usize].sources.get_mut(&dst).expect("source state exists");
        if st.retry_at != Some(now) {
            return;
        }
        st.retry_at = None;
        st.cache.expire(now);
        if st.cache.current(now).is_some() {
            self.flush(src, dst);
        } else if !st.buffer.is_empty() {
            self.seek_route(src, dst);
        }
    }

    fn source_break(&mut self, src: NodeId, dst: NodeId, edge: Edge) {
        let now = self.now;
        let Some(st) = self.nodes[src as usize].sources.get_mut(&dst) else { return };
        let affected = st.cache.mark_broken(edge);
        if !affected && st.cache.active().is_some() {
            return;
        }
        let fresh = now - st.installed_at <= self.cfg.routing.alternate_max_age_ms;
        let switched = if fresh { st.cache.switch(now).map(|i| st.cache.routes()[i].hops.clone()) } else { None };
        if self.fep {
            self.emit(Some(src), LogEntry::RouteSwitch { dst, reason: SwitchReason::LinkBreak, edge, route: switched.clone() });
        }
        if switched.is_some() {
            self.counters.route_switches += 1;
            self.flush(src, dst);
        } else {
            self.seek_route(src, dst);
        }
    }

    fn source_notice(&mut self, src: NodeId, dst: NodeId, edge: Edge, until: f64) {
        let now = self.now;
        // The nap may already be over by the time the notice gets here.
        if until <= now {
            return;
        }
        let Some(st) = self.nodes[src as usize].sources.get_mut(&dst) else { return };
        if !st.cache.suspend(edge, until) {
            return;
        }
        let switched = st.cache.switch(now).map(|i| st.cache.routes()[i].hops.clone());
        let pending = st.pending.is_some();
        self.emit(Some(src), LogEntry::RouteSwitch { dst, reason: SwitchReason::SleepRedirect, edge, route: switched.clone() });
        if switched.is_some() {
            self.counters.route_switches += 1;
            self.flush(src, dst);
        } else if !pending {
            self.start_discovery(src, dst, Cause::SleepRedirect);
        }
    }

    // ---- discovery ------------------------------------------------------

    fn start_discovery(&mut self, src: NodeId, dst: NodeId, cause: Cause) {
        let now = self.now;
        let st = self.nodes[src as usize].sources.entry(dst).or_default();
        if st.pending.is_some() || now < st.holdoff_until {
            return;
        }
        self.launch_attempt(src, dst, cause, 1);
    }

    fn launch_attempt(&mut self, src: NodeId, dst: NodeId, cause: Cause, attempt: u32) {
        let n = &mut self.nodes[src as usize];
        let bid = n.next_bid;
        n.next_bid += 1;
        n.discovery.mark_seen(src, bid);
        n.sources.entry(dst).or_default().pending = Some(Pending { bid, attempt, cause });
        self.counters.discoveries += 1;
        self.emit(Some(src), LogEntry::Discovery { dst, bid, attempt, cause });
        let bytes = self.cfg.packets.rreq_base;
        self.broadcast(src, PacketKind::Rreq, bytes, Some(cause), Body::Rreq { src, dst, bid, path: vec![src] });
        let at = self.now + self.cfg.routing.discovery_timeout_ms;
        self.schedule(at, Event::DiscoveryTimeout { node: src, dst, bid });
    }

    fn on_discovery_timeout(&mut self, src: NodeId, dst: NodeId, bid: u64) {
        if !self.nodes[src as usize].alive {
            return;
        }
        let max = self.cfg.routing.max_discovery_attempts;
        let holdoff = self.cfg.routing.discovery_holdoff_ms;
        let now = self.now;
        let st = self.nodes[src as usize].sources.get_mut(&dst).expect("source state exists");
        let Some(p) = st.pending.filter(|p| p.bid == bid) else { return };
        if p.attempt < max {
            self.launch_attempt(src, dst, p.cause, p.attempt + 1);
            return;
        }
        st.pending = None;
        st.holdoff_until = now + holdoff;
        let lost: Vec<DataPacket> = st.buffer.drain(..).collect();
        for d in &lost {
            self.drop_data(src, d, DropReason::NoRoute);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_rreq(&mut self, id: NodeId, from: NodeId, src: NodeId, dst: NodeId, bid: u64, path: Vec<NodeId>, cause: Option<Cause>) {
        let now = self.now;
        let max_hops = self.cfg.routing.max_hops;
        let n = &mut self.nodes[id as usize];
        // A napping node does not offer itself to the granter that put it to sleep.
        if n.napping_from.get(&from).is_some_and(|&u| u > now) {
            return;
        }
        match n.discovery.process_request(id, dst, src, bid, &path, max_hops) {
            RreqAction::Forward(p) => {
                let bytes = self.cfg.packets.rreq_base + self.cfg.packets.rreq_per_hop * (p.len() as u32 - 1);
                self.broadcast(id, PacketKind::Rreq, bytes, cause, Body::Rreq { src, dst, bid, path: p });
            }
            RreqAction::Collect { first: true, .. } => {
                let at = now + self.cfg.routing.collection_window_ms;
                self.schedule(at, Event::CollectDeadline { node: id, src, bid, cause });
            }
            RreqAction::Collect { .. } | RreqAction::Drop(_) => {}
        }
    }

    fn on_collect_deadline(&mut self, id: NodeId, src: NodeId, bid: u64, cause: Option<Cause>) {
        if !self.nodes[id as usize].alive {
            return;
        }
        let paths = self.nodes[id as usize].discovery.close(src, bid);
        if paths.is_empty() {
            return;
        }
        let limit = if self.fep { 3 } else { 1 };
        let routes = select_routes(paths, limit);
        let hops: usize = routes.iter().map(|r| r.len() - 1).sum();
        let bytes = self.cfg.packets.rrep_base + self.cfg.packets.rrep_per_hop * hops as u32;
        let best = Arc::new(routes[0].clone());
        let Some(next) = towards_source(&best, id) else { return };
        let body = Body::Rrep { src, dst: id, bid, path: best, routes: Arc::new(routes) };
        self.send_control(id, next, PacketKind::Rrep, bytes, cause, body);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_rrep(
        &mut self,
        id: NodeId,
        src: NodeId,
        dst: NodeId,
        bid: u64,
        path: Arc<Vec<NodeId>>,
        routes: Arc<Vec<Vec<NodeId>>>,
        cause: Option<Cause>,
    ) {
        if id != src {
            if let Some(next) = towards_source(&path, id) {
                let bytes = self.cfg.packets.rrep_base
                    + self.cfg.packets.rrep_per_hop * routes.iter().map(|r| r.len() as u32 - 1).sum::<u32>();
                self.send_control(id, next, PacketKind::Rrep, bytes, cause, Body::Rrep { src, dst, bid, path, routes });
            }
            return;
        }
        let now = self.now;
        let max_hops = self.cfg.routing.max_hops;
        let st = self.nodes[id as usize].sources.entry(dst).or_default();
        let useful = st.pending.is_some() || st.cache.current(now).is_none();
        if !useful {
            return;
        }
        let parsed: Vec<Route> = routes.iter().filter_map(|r| Route::new(r.clone(), max_hops)).collect();
        if parsed.is_empty() {
            return;
        }
        st.pending = None;
        st.installed_at = now;
        st.cache.install(parsed, now);
        self.emit(Some(id), LogEntry::RouteInstalled { dst, routes: routes.to_vec() });
        self.flush(id, dst);
        let st = self.nodes[id as usize].sources.get_mut(&dst).expect("source state exists");
        if !st.buffer.is_empty() && st.cache.current(now).is_none() {
            self.seek_route(id, dst);
        }
    }

    // ---- sleep protocol -------------------------------------------------

    fn flags(&self, id: NodeId) -> (bool, bool) {
        let n = &self.nodes[id as usize];
        let cap = n.energy.capacity().0 as f64;
        slreq::enable_flags(n.energy.residual().0 as f64, cap, n.service.ts(), n.service.tr())
            .expect("capacity is positive")
    }

    /// Fires a request shot when an enable flag has just risen.
    fn flag_check(&mut self, id: NodeId) {
        if !self.fep || !self.nodes[id as usize].alive {
            return;
        }
        let (e, ol) = self.flags(id);
        let armed = e || ol;
        let was = std::mem::replace(&mut self.nodes[id as usize].armed, armed);
        if armed && !was {
            self.try_shot(id, false);
        }
    }

    fn try_shot(&mut self, id: NodeId, periodic: bool) {
        if !self.fep {
            return;
        }
        let now = self.now;
        let (e, ol) = self.flags(id);
        let cooldown = self.cfg.fep.cooldown_ms;
        let n = &mut self.nodes[id as usize];
        let uplinks = n.ledger.uplink_set(now);
        if n.budget.gate(e || ol, now, cooldown, uplinks.len()).is_err() {
            return;
        }
        n.budget.spend(now);
        let shot = n.budget.used;
        let uplink_taus: Vec<f64> = uplinks.iter().map(|&u| n.ledger.rate(u, now)).collect();
        let items: Vec<ShotItem> = uplinks
            .iter()
            .zip(&uplink_taus)
            .map(|(&u, &tau)| ShotItem { addressee: u, record: n.ledger.ph_record(u), tau })
            .collect();
        for &u in &uplinks {
            n.ledger.record_sleep_request(u);
        }
        let (residual_j, capacity_j) = (n.energy.residual().joules(), n.energy.capacity().joules());
        let (ts, tr) = (n.service.ts(), n.service.tr());
        self.counters.sleep_shots += 1;
        self.emit(
            Some(id),
            LogEntry::SleepShot {
                shot,
                items: items.clone(),
                uplink_taus: uplink_taus.clone(),
                periodic,
                e,
                ol,
                residual_j,
                capacity_j,
                ts,
                tr,
            },
        );
        let bytes = self.cfg.packets.sleep_message;
        let body = Body::SleepRequest { shot, items: Arc::new(items), uplink_taus: Arc::new(uplink_taus) };
        self.broadcast(id, PacketKind::SleepRequest, bytes, Some(Cause::Sleep), body);
    }

    fn on_sleep_request(&mut self, granter: NodeId, sleeper: NodeId, shot: u32, item: ShotItem, uplink_taus: Arc<Vec<f64>>) {
        let now = self.now;
        let live_ms = self.cfg.estimators.rate_window_s * 1000.0;
        let n = &self.nodes[granter as usize];
        let views = n
            .transit
            .values()
            .filter_map(|v| v.hop_view(granter, sleeper, now, live_ms))
            .collect();
        let input = SlReqInput {
            record: item.record,
            views,
            tau_ab: item.tau,
            uplink_taus: uplink_taus.to_vec(),
            max_sleep_ms: self.cfg.fep.max_sleep_ms,
            variant: self.cfg.formula_variant(),
        };
        let Ok(trace) = slreq::trace(&input) else {
            self.counters.denies += 1;
            return;
        };
        let decision = trace.decision;
        self.emit(Some(granter), LogEntry::SlreqEval { requester: sleeper, shot, input, trace });
        let bytes = self.cfg.packets.sleep_message;
        let Some(duration) = decision.duration_ms() else {
            self.counters.denies += 1;
            self.send_control(granter, sleeper, PacketKind::SleepReply, bytes, Some(Cause::Sleep), Body::SleepReply { shot, grant: None });
            return;
        };
        self.counters.grants += 1;
        let until = now + duration;
        let n = &mut self.nodes[granter as usize];
        n.edge_sleep.grant(sleeper, until);
        let edge = (granter, sleeper);
        let redirects: Vec<(NodeId, NodeId, Arc<Vec<NodeId>>)> = n
            .transit
            .values()
            .filter(|v| v.remaining > 0 && now - v.last_seen <= live_ms && v.route.uses_edge(edge))
            .map(|v| (v.route.source(), v.route.destination(), Arc::new(v.route.hops.clone())))
            .collect();
        self.schedule(until, Event::SleepExpiry { granter });
        self.emit(
            Some(granter),
            LogEntry::SleepGrant { sleeper, shot, duration_ms: duration, until, notices: redirects.len() as u32 },
        );
        let body = Body::SleepReply { shot, grant: Some((duration, until)) };
        self.send_control(granter, sleeper, PacketKind::SleepReply, bytes, Some(Cause::Sleep), body);
        let notice_bytes = self.cfg.packets.switch_notice;
        for (src, dst, path) in redirects {
            if src == granter {
                self.source_notice(src, dst, edge, until);
            } else if let Some(prev) = towards_source(&path, granter) {
                let body = Body::Notice { src, dst, edge, until, path };
                self.send_control(granter, prev, PacketKind::SwitchNotice, notice_bytes, Some(Cause::SleepRedirect), body);
            }
        }
    }

    fn on_sleep_expiry(&mut self, granter: NodeId) {
        if !self.nodes[granter as usize].alive {
            return;
        }
        let released = self.nodes[granter as usize].edge_sleep.expire(self.now);
        for sleeper in released {
            self.emit(Some(granter), LogEntry::SleepExpire { sleeper });
            let held = self.nodes[granter as usize].held.remove(&sleeper).unwrap_or_default();
            for out in held {
                self.enqueue(granter, out);
            }
        }
    }
}

/// Runs one scenario to completion without recording the event log.
pub fn run(cfg: ScenarioConfig) -> Result<RunOutput, ConfigError> {
    Ok(Simulator::new(cfg)?.run())
}

/// Runs one scenario to completion, recording the event log.
pub fn run_logged(cfg: ScenarioConfig) -> Result<RunOutput, ConfigError> {
    let mut sim = Simulator::new(cfg)?;
    sim.record_log(true);
    Ok(sim.run())
}
