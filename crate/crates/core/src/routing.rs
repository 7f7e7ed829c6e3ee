//! On-demand source routing with a three-route reply and cached failover.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::slreq::{fuzzify_unit, FuzzyGrade, HopSessionView};
use crate::NodeId;

pub type Edge = (NodeId, NodeId);

/// Grade of a route of `hop_count` hops: shorter routes grade higher.
pub fn route_grade(hop_count: usize, max_hops: usize) -> FuzzyGrade {
    let p = (1.0 - hop_count as f64 / max_hops as f64).clamp(0.0, 1.0);
    fuzzify_unit(p).expect("clamped to the unit interval")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub hops: Vec<NodeId>,
    pub grade: FuzzyGrade,
}

impl Route {
    /// Builds a route from a router sequence. Returns `None` for sequences
    /// shorter than two nodes, with repeated nodes, or longer than `max_hops`.
    pub fn new(hops: Vec<NodeId>, max_hops: usize) -> Option<Route> {
        if hops.len() < 2 || hops.len() - 1 > max_hops {
            return None;
        }
        let mut seen = BTreeSet::new();
        if !hops.iter().all(|n| seen.insert(*n)) {
            return None;
        }
        let grade = route_grade(hops.len() - 1, max_hops);
        Some(Route { hops, grade })
    }

    pub fn hop_count(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn source(&self) -> NodeId {
        self.hops[0]
    }

    pub fn destination(&self) -> NodeId {
        *self.hops.last().expect("route has at least two nodes")
    }

    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.hops.iter().position(|&n| n == node)
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.hops.contains(&node)
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.hops.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn uses_edge(&self, edge: Edge) -> bool {
        self.edges().any(|e| e == edge)
    }

    pub fn next_hop(&self, node: NodeId) -> Option<NodeId> {
        self.position(node).and_then(|i| self.hops.get(i + 1).copied())
    }

    pub fn prev_hop(&self, node: NodeId) -> Option<NodeId> {
        self.position(node).and_then(|i| i.checked_sub(1).map(|j| self.hops[j]))
    }
}

/// Ranks collected paths by hop count (ties: lexicographic sequence) and picks
/// up to `limit` of them. After the best, paths sharing fewer interior nodes
/// with it are preferred, fully disjoint ones first; ties keep rank order.
pub fn select_routes(mut paths: Vec<Vec<NodeId>>, limit: usize) -> Vec<Vec<NodeId>> {
    paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    paths.dedup();
    let mut out: Vec<Vec<NodeId>> = Vec::new();
    if limit == 0 || paths.is_empty() {
        return out;
    }
    let best = paths.remove(0);
    let interior: BTreeSet<NodeId> = best[1..best.len() - 1].iter().copied().collect();
    let shared = |p: &Vec<NodeId>| p[1..p.len() - 1].iter().filter(|n| interior.contains(n)).count();
    // stable sort keeps the hop-count/lexicographic rank among equal overlaps
    paths.sort_by_key(|p| shared(p));
    out.push(best);
    out.extend(paths.into_iter().take(limit - 1));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchReason {
    LinkBreak,
    SleepRedirect,
}

/// Up to three ranked routes from this source to one destination.
#[derive(Debug, Clone, Default)]
pub struct RouteCache {
    routes: Vec<Route>,
    active: Option<usize>,
    broken: BTreeSet<Edge>,
    suspended: BTreeMap<Edge, f64>,
}

impl RouteCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the cached routes with a fresh reply and activates the best
    /// eligible one. Suspensions carry over; break marks do not.
    pub fn install(&mut self, routes: Vec<Route>, now: f64) -> Option<usize> {
        self.routes = routes;
        self.broken.clear();
        self.active = None;
        self.switch(now)
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn active_index(&self) -> Option<usize> {
        self.active
    }

    pub fn active(&self) -> Option<&Route> {
        self.active.map(|i| &self.routes[i])
    }

    fn is_suspended(&self, edge: Edge, now: f64) -> bool {
        self.suspended.get(&edge).is_some_and(|&until| until > now)
    }

    fn is_broken(&self, route: &Route) -> bool {
        route.edges().any(|e| self.broken.contains(&e))
    }

    pub fn is_eligible(&self, idx: usize, now: f64) -> bool {
        let route = &self.routes[idx];
        !self.is_broken(route) && !route.edges().any(|e| self.is_suspended(e, now))
    }

    /// Activates the best-ranked eligible route, if any.
    pub fn switch(&mut self, now: f64) -> Option<usize> {
        self.active = (0..self.routes.len()).find(|&i| self.is_eligible(i, now));
        self.active
    }

    /// Returns the active route if it is still eligible, otherwise switches.
    pub fn current(&mut self, now: f64) -> Option<&Route> {
        let keep = self.active.is_some_and(|i| self.is_eligible(i, now));
        if !keep {
            self.switch(now);
        }
        self.active()
    }

    /// Records a broken link. Returns true if the active route used it.
    pub fn mark_broken(&mut self, edge: Edge) -> bool {
        self.broken.insert(edge);
        self.active().is_some_and(|r| r.uses_edge(edge))
    }

    /// Records a sleep suspension. Returns true if the active route uses the edge.
    pub fn suspend(&mut self, edge: Edge, until: f64) -> bool {
        let slot = self.suspended.entry(edge).or_insert(until);
        *slot = slot.max(until);
        self.active().is_some_and(|r| r.uses_edge(edge))
    }

    pub fn expire(&mut self, now: f64) {
        self.suspended.retain(|_, until| *until > now);
    }

    /// Earliest time a non-broken route becomes usable again, when every
    /// non-broken route is only blocked by suspensions.
    pub fn next_unblock(&self, now: f64) -> Option<f64> {
        self.routes
            .iter()
            .filter(|r| !self.is_broken(r))
            .filter_map(|r| {
                r.edges()
                    .filter_map(|e| self.suspended.get(&e).copied().filter(|&u| u > now))
                    .fold(None, |acc: Option<f64>, u| Some(acc.map_or(u, |a| a.max(u))))
            })
            .fold(None, |acc: Option<f64>, u| Some(acc.map_or(u, |a| a.min(u))))
    }

    /// Cached routes other than the active one that have not been reported broken.
    pub fn alternatives(&self) -> Vec<Route> {
        self.routes
            .iter()
            .enumerate()
            .filter(|(i, r)| Some(*i) != self.active && !self.is_broken(r))
            .map(|(_, r)| r.clone())
            .collect()
    }
}

/// Route-request outcome at one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RreqAction {
    /// Rebroadcast with this node appended.
    Forward(Vec<NodeId>),
    /// Destination collected the path; `first` marks the opening copy of the
    /// collection window.
    Collect { path: Vec<NodeId>, first: bool },
    Drop(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Duplicate,
    Loop,
    TtlExceeded,
    WindowClosed,
}

#[derive(Debug, Clone)]
pub struct Collection {
    pub paths: Vec<Vec<NodeId>>,
    pub open: bool,
}

/// Flood bookkeeping of one node.
#[derive(Debug, Clone, Default)]
pub struct DiscoveryState {
    seen: BTreeSet<(NodeId, u64)>,
    collecting: BTreeMap<(NodeId, u64), Collection>,
}

impl DiscoveryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark_seen(&mut self, source: NodeId, bid: u64) -> bool {
        self.seen.insert((source, bid))
    }

    pub fn process_request(
        &mut self,
        me: NodeId,
        destination: NodeId,
        source: NodeId,
        bid: u64,
        path: &[NodeId],
        max_hops: usize,
    ) -> RreqAction {
        if path.contains(&me) {
            return RreqAction::Drop(DropReason::Loop);
        }
        let mut extended = path.to_vec();
        extended.push(me);
        if me == destination {
            if extended.len() - 1 > max_hops {
                return RreqAction::Drop(DropReason::TtlExceeded);
            }
            let entry = self.collecting.entry((source, bid));
            let first = matches!(entry, std::collections::btree_map::Entry::Vacant(_));
            let coll = entry.or_insert(Collection { paths: Vec::new(), open: true });
            if !coll.open {
                return RreqAction::Drop(DropReason::WindowClosed);
            }
            coll.paths.push(extended.clone());
            return RreqAction::Collect { path: extended, first };
        }
        if self.seen.contains(&(source, bid)) {
            return RreqAction::Drop(DropReason::Duplicate);
        }
        // A router at hop h can still reach the destination within max_hops
        // only if h < max_hops.
        if extended.len() - 1 >= max_hops {
            return RreqAction::Drop(DropReason::TtlExceeded);
        }
        self.seen.insert((source, bid));
        RreqAction::Forward(extended)
    }

    /// Closes the collection window and hands back the gathered paths.
    pub fn close(&mut self, source: NodeId, bid: u64) -> Vec<Vec<NodeId>> {
        match self.collecting.get_mut(&(source, bid)) {
            Some(c) if c.open => {
                c.open = false;
                std::mem::take(&mut c.paths)
            }
            _ => Vec::new(),
        }
    }
}

/// Source-side accounting of one CBR session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: u32,
    pub source: NodeId,
    pub destination: NodeId,
    pub total_packets: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub delay_sum_ms: f64,
}

impl SessionState {
    pub fn new(id: u32, source: NodeId, destination: NodeId, total_packets: u64) -> Self {
        Self { id, source, destination, total_packets, sent: 0, delivered: 0, dropped: 0, delay_sum_ms: 0.0 }
    }

    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }
}

/// What a router has learned about one session from the data headers it forwarded.
#[derive(Debug, Clone)]
pub struct TransitView {
    pub route: Arc<Route>,
    pub alternatives: Arc<Vec<Route>>,
    pub remaining: u64,
    pub last_seen: f64,
    pub forwarded_to: BTreeMap<NodeId, u64>,
}

impl TransitView {
    /// Builds the controller's view of this session for hop `me -> next`,
    /// if the session currently uses that hop and is still live.
    pub fn hop_view(&self, me: NodeId, next: NodeId, now: f64, live_window_ms: f64) -> Option<HopSessionView> {
        if self.remaining == 0 || now - self.last_seen > live_window_ms || !self.route.uses_edge((me, next)) {
            return None;
        }
        let alt_grades = self
            .alternatives
            .iter()
            .filter(|r| !r.contains(next))
            .map(|r| r.grade)
            .collect();
        Some(HopSessionView {
            alpha1: self.forwarded_to.get(&next).copied().unwrap_or(0),
            alpha2: self.remaining,
            alt_grades,
        })
    }
}
