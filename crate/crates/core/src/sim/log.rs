//! Run event log. One JSON object per line:
//! `{"time":..,"seq":..,"node":..,"kind":"..","payload":{..}}`.
//!
//! `seq` is the sequence number of the scheduled event whose handling produced
//! the record; several records may share one. `time` is in milliseconds.

use serde::{Deserialize, Serialize};
use std::io::{self, Write};

use crate::routing::{Edge, SwitchReason};
use crate::slreq::{PhRecord, SlReqInput, SlReqTrace};
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Rreq,
    Rrep,
    Rerr,
    SwitchNotice,
    SleepRequest,
    SleepReply,
    Data,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        self != PacketKind::Data
    }
}

/// Causal tag carried by control traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    /// First discovery towards a destination.
    Initial,
    /// Recovery after a reported link break.
    BreakRecovery,
    /// Redirect after a sleep grant.
    SleepRedirect,
    /// Sleep request and reply messages.
    Sleep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LinkBreak,
    NodeDeath,
    QueueFull,
    BufferFull,
    NoRoute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotItem {
    pub addressee: NodeId,
    pub record: PhRecord,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum LogEntry {
    /// Transmission by `node`; `to` is `None` for broadcasts.
    Tx { packet: PacketKind, bytes: u32, to: Option<NodeId>, cause: Option<Cause> },
    Rx { packet: PacketKind, bytes: u32, from: NodeId },
    /// Idle drain applied to every node alive at this instant.
    IdleTick,
    Death,
    Arrival { from: NodeId },
    Forwarded { uplink: NodeId },
    /// A forwarded data packet finished transmission after `sojourn_ms` at this node.
    Serviced { sojourn_ms: f64 },
    DataSent { session: u32, seq: u64 },
    DataDelivered { session: u32, seq: u64, delay_ms: f64 },
    DataDropped { session: u32, seq: u64, reason: DropReason },
    LinkBreak { session: u32, to: NodeId },
    Discovery { dst: NodeId, bid: u64, attempt: u32, cause: Cause },
    RouteInstalled { dst: NodeId, routes: Vec<Vec<NodeId>> },
    RouteSwitch { dst: NodeId, reason: SwitchReason, edge: Edge, route: Option<Vec<NodeId>> },
    SleepShot {
        shot: u32,
        items: Vec<ShotItem>,
        uplink_taus: Vec<f64>,
        periodic: bool,
        e: bool,
        ol: bool,
        residual_j: f64,
        capacity_j: f64,
        ts: f64,
        tr: f64,
    },
    SlreqEval { requester: NodeId, shot: u32, input: SlReqInput, trace: SlReqTrace },
    SleepGrant { sleeper: NodeId, shot: u32, duration_ms: f64, until: f64, notices: u32 },
    SleepExpire { sleeper: NodeId },
    SleepHold { session: u32, seq: u64, sleeper: NodeId },
    Partition { components: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    pub seq: u64,
    pub node: Option<NodeId>,
    #[serde(flatten)]
    pub entry: LogEntry,
}

pub fn write_jsonl<W: Write>(records: &[LogRecord], mut out: W) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<LogRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
