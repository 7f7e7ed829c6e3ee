//! Per-node bookkeeping feeding the sleep controller: forwarding counters per
//! uplink neighbor, arrival-rate windows, inter-arrival/service-time means and
//! the battery account.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

use crate::error::LedgerError;
use crate::slreq::PhRecord;
use crate::NodeId;

/// Sliding-window arrival counter. Rates are in packets per second; times in ms.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    window_ms: f64,
    timestamps: VecDeque<f64>,
}

impl RateEstimator {
    pub fn new(window_s: f64) -> Self {
        Self { window_ms: window_s * 1000.0, timestamps: VecDeque::new() }
    }

    pub fn record(&mut self, now_ms: f64) {
        self.timestamps.push_back(now_ms);
        let cutoff = now_ms - self.window_ms;
        while self.timestamps.front().is_some_and(|&t| t < cutoff) {
            self.timestamps.pop_front();
        }
    }

    /// Arrivals inside `[now - W, now]`.
    pub fn count(&self, now_ms: f64) -> usize {
        let cutoff = now_ms - self.window_ms;
        self.timestamps.iter().rev().take_while(|&&t| t >= cutoff).count()
    }

    pub fn rate(&self, now_ms: f64) -> f64 {
        self.count(now_ms) as f64 / (self.window_ms / 1000.0)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NeighborEntry {
    pub s: u64,
    pub r: u64,
    pub sl: u64,
    pub arrivals: RateEstimator,
}

/// Counters for every uplink neighbor that ever handed this node a packet.
#[derive(Debug, Clone)]
pub struct NeighborLedger {
    window_s: f64,
    entries: BTreeMap<NodeId, NeighborEntry>,
}

impl NeighborLedger {
    pub fn new(window_s: f64) -> Self {
        Self { window_s, entries: BTreeMap::new() }
    }

    fn entry(&mut self, neighbor: NodeId) -> &mut NeighborEntry {
        let window_s = self.window_s;
        self.entries.entry(neighbor).or_insert_with(|| NeighborEntry {
            s: 0,
            r: 0,
            sl: 0,
            arrivals: RateEstimator::new(window_s),
        })
    }

    pub fn record_arrival(&mut self, neighbor: NodeId, now_ms: f64) {
        let e = self.entry(neighbor);
        e.s += 1;
        e.arrivals.record(now_ms);
    }

    pub fn record_forwarded(&mut self, neighbor: NodeId) -> Result<(), LedgerError> {
        match self.entries.get_mut(&neighbor) {
            Some(e) if e.r < e.s => {
                e.r += 1;
                Ok(())
            }
            _ => Err(LedgerError::ForwardWithoutArrival(neighbor)),
        }
    }

    pub fn record_sleep_request(&mut self, neighbor: NodeId) {
        self.entry(neighbor).sl += 1;
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&NeighborEntry> {
        self.entries.get(&neighbor)
    }

    pub fn ph_record(&self, neighbor: NodeId) -> PhRecord {
        self.entries
            .get(&neighbor)
            .map(|e| PhRecord { s: e.s, r: e.r, sl: e.sl })
            .unwrap_or_default()
    }

    pub fn rate(&self, neighbor: NodeId, now_ms: f64) -> f64 {
        self.entries.get(&neighbor).map_or(0.0, |e| e.arrivals.rate(now_ms))
    }

    /// Neighbors with at least one forwarding arrival inside the rate window,
    /// in ascending id order.
    pub fn uplink_set(&self, now_ms: f64) -> Vec<NodeId> {
        self.entries
            .iter()
            .filter(|(_, e)| e.arrivals.count(now_ms) > 0)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn neighbors(&self) -> impl Iterator<Item = (NodeId, &NeighborEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }
}

/// Exponentially weighted service-time (`ts`) and inter-arrival (`tr`) means, ms.
/// A service sample is the time a forwarded packet spent at the node, from
/// arrival to the end of its transmission. Both means read zero until sampled.
#[derive(Debug, Clone)]
pub struct ServiceTracker {
    alpha: f64,
    ts: Option<f64>,
    tr: Option<f64>,
    last_arrival: Option<f64>,
}

fn ewma(mean: Option<f64>, sample: f64, alpha: f64) -> f64 {
    match mean {
        None => sample,
        Some(m) => alpha * sample + (1.0 - alpha) * m,
    }
}

impl ServiceTracker {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, ts: None, tr: None, last_arrival: None }
    }

    pub fn on_arrival(&mut self, now_ms: f64) {
        if let Some(prev) = self.last_arrival {
            self.tr = Some(ewma(self.tr, now_ms - prev, self.alpha));
        }
        self.last_arrival = Some(now_ms);
    }

    pub fn on_service(&mut self, sojourn_ms: f64) {
        self.ts = Some(ewma(self.ts, sojourn_ms, self.alpha));
    }

    pub fn ts(&self) -> f64 {
        self.ts.unwrap_or(0.0)
    }

    pub fn tr(&self) -> f64 {
        self.tr.unwrap_or(0.0)
    }
}

/// Energy in nanojoules. Integer units keep per-node sums exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Hash, Serialize, Deserialize)]
pub struct NanoJoules(pub u64);

impl NanoJoules {
    pub fn from_joules(j: f64) -> Self {
        NanoJoules((j * 1e9).round() as u64)
    }

    pub fn from_millijoules(mj: f64) -> Self {
        NanoJoules((mj * 1e6).round() as u64)
    }

    pub fn joules(self) -> f64 {
        self.0 as f64 / 1e9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    TxControl,
    RxControl,
    TxData,
    RxData,
    IdleTick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DebitOutcome {
    Alive,
    /// This debit exhausted the battery.
    Died,
    /// The battery was already empty.
    AlreadyDead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyAccount {
    capacity: NanoJoules,
    consumed: NanoJoules,
}

impl EnergyAccount {
    pub fn new(capacity: NanoJoules) -> Self {
        Self { capacity, consumed: NanoJoules(0) }
    }

    pub fn with_consumed(capacity: NanoJoules, consumed: NanoJoules) -> Self {
        Self { capacity, consumed: NanoJoules(consumed.0.min(capacity.0)) }
    }

    pub fn capacity(&self) -> NanoJoules {
        self.capacity
    }

    pub fn consumed(&self) -> NanoJoules {
        self.consumed
    }

    pub fn residual(&self) -> NanoJoules {
        NanoJoules(self.capacity.0 - self.consumed.0)
    }

    pub fn residual_ratio(&self) -> f64 {
        self.residual().0 as f64 / self.capacity.0 as f64
    }

    pub fn is_depleted(&self) -> bool {
        self.consumed >= self.capacity
    }

    pub fn debit_nj(&mut self, amount: NanoJoules) -> DebitOutcome {
        if self.is_depleted() {
            return DebitOutcome::AlreadyDead;
        }
        self.consumed = NanoJoules(self.consumed.0.saturating_add(amount.0).min(self.capacity.0));
        if self.is_depleted() {
            DebitOutcome::Died
        } else {
            DebitOutcome::Alive
        }
    }

    /// Debits `joules` for an activity of the given kind.
    pub fn debit(&mut self, _kind: EnergyKind, joules: f64) -> Result<DebitOutcome, LedgerError> {
        if !(joules >= 0.0) {
            return Err(LedgerError::NegativeDebit(joules));
        }
        Ok(self.debit_nj(NanoJoules::from_joules(joules)))
    }
}
