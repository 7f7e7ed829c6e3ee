//! Packets exchanged between simulated nodes.

use std::sync::Arc;

use super::log::{Cause, PacketKind, ShotItem};
use crate::routing::{Edge, Route};
use crate::NodeId;

#[derive(Debug, Clone)]
pub struct DataPacket {
    pub session: u32,
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub route: Arc<Route>,
    /// Other cached routes of the source, carried for the controller at routers.
    pub alternatives: Arc<Vec<Route>>,
    pub total: u64,
    /// Packets the source has yet to emit after this one.
    pub remaining: u64,
    pub created: f64,
}

#[derive(Debug, Clone)]
pub enum Body {
    Rreq { src: NodeId, dst: NodeId, bid: u64, path: Vec<NodeId> },
    Rrep { src: NodeId, dst: NodeId, bid: u64, path: Arc<Vec<NodeId>>, routes: Arc<Vec<Vec<NodeId>>> },
    Rerr { src: NodeId, dst: NodeId, edge: Edge, path: Arc<Vec<NodeId>> },
    Notice { src: NodeId, dst: NodeId, edge: Edge, until: f64, path: Arc<Vec<NodeId>> },
    SleepRequest { shot: u32, items: Arc<Vec<ShotItem>>, uplink_taus: Arc<Vec<f64>> },
    SleepReply { shot: u32, grant: Option<(f64, f64)> },
    Data(DataPacket),
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub kind: PacketKind,
    pub bytes: u32,
    pub cause: Option<Cause>,
    pub body: Body,
}

impl Packet {
    pub fn data(&self) -> Option<&DataPacket> {
        match &self.body {
            Body::Data(d) => Some(d),
            _ => None,
        }
    }
}

/// A queued transmission. `uplink` is set for data this node forwards for a
/// neighbor; `arrived` is when the packet reached this node.
#[derive(Debug, Clone)]
pub struct Outgoing {
    pub to: Option<NodeId>,
    pub packet: Packet,
    pub uplink: Option<NodeId>,
    pub arrived: f64,
}

/// Previous hop of `me` on a source-to-destination path, i.e. the next node towards the source.
pub fn towards_source(path: &[NodeId], me: NodeId) -> Option<NodeId> {
    let i = path.iter().position(|&n| n == me)?;
    i.checked_sub(1).map(|j| path[j])
}
