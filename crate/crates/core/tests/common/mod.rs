//! Independent checks shared by the integration tests. Nothing here calls the
//! controller or the metric code under test: formulas, rule tables and the
//! bookkeeping are rebuilt from scratch and compared against what a run logged.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fep_core::config::SessionSpec;
use fep_core::sim::log::{LogEntry, LogRecord, PacketKind};
use fep_core::sim::mobility::Point;
use fep_core::slreq::{CcsVariant, FuzzyGrade, HopSessionView, PhRecord, PhVariant, SleepDecision, Table3Orientation};
use fep_core::{MetricsReport, NodeId, Protocol, RunOutput, ScenarioConfig, Simulator};

pub const TOL: f64 = 1e-9;

// ---- formulas ---------------------------------------------------------------

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

/// Quartile class index 0..=3 of a value in [0, 1].
pub fn unit_class(x: f64) -> usize {
    ((x.clamp(0.0, 1.0) * 4.0).floor() as usize).min(3)
}

pub fn grade_index(g: FuzzyGrade) -> usize {
    match g {
        FuzzyGrade::A1 => 0,
        FuzzyGrade::A2 => 1,
        FuzzyGrade::A3 => 2,
        FuzzyGrade::A4 => 3,
    }
}

/// Returns (cl, low, high).
pub fn oracle_cl(tau_ab: f64, taus: &[f64]) -> (f64, f64, f64) {
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    if mean == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let min = taus.iter().cloned().fold(f64::MAX, f64::min);
    let max = taus.iter().cloned().fold(f64::MIN, f64::max);
    (tau_ab / mean, min / mean, max / mean)
}

pub fn oracle_cl_class(cl: f64, low: f64, high: f64) -> usize {
    if high <= low {
        return 3;
    }
    let width = (high - low) / 4.0;
    let mut class = 0;
    for k in 1..4 {
        if cl >= low + k as f64 * width - 1e-12 * high.abs().max(1.0) {
            class = k;
        }
    }
    class
}

pub fn oracle_ph(s: u64, r: u64, sl: u64, variant: PhVariant) -> f64 {
    if s == 0 {
        return 1.0;
    }
    let q = r as f64 / s as f64;
    match variant {
        PhVariant::Semantic => (q - 1.0).exp() / (sl as f64 + 1.0),
        PhVariant::AsPrinted => {
            let sl = if sl == 0 { 1.0 } else { sl as f64 };
            ((1.0 - 1.0 / sl) * (1.0 - q).exp()).clamp(0.0, 1.0)
        }
    }
}

/// Centre of the crisp range of each grade.
const MIDS: [f64; 4] = [0.125, 0.375, 0.625, 0.875];

pub fn oracle_ccs(views: &[HopSessionView], variant: CcsVariant) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for v in views {
        let f1 = if v.alpha1 + v.alpha2 == 0 { 1.0 } else { 1.0 / (1.0 + v.alpha2 as f64 / v.alpha1 as f64) };
        let f2 = if v.alt_grades.is_empty() {
            0.0
        } else {
            v.alt_grades.iter().map(|&g| MIDS[grade_index(g)]).sum::<f64>() / v.alt_grades.len() as f64
        };
        total += match variant {
            CcsVariant::Semantic => f1 * (f2 - 1.0).exp(),
            CcsVariant::AsPrinted => f1 * (1.0 - f2).exp(),
        };
    }
    let mean = total / views.len() as f64;
    match variant {
        CcsVariant::Semantic => mean,
        CcsVariant::AsPrinted => mean.clamp(0.0, 1.0),
    }
}

/// Printed rule tables, rows then columns, grades as 1..=4.
pub const TABLE2: [[u8; 4]; 4] = [[1, 1, 1, 2], [1, 1, 2, 2], [1, 2, 3, 3], [2, 2, 3, 4]];
pub const TABLE3: [[u8; 4]; 4] = [[1, 1, 2, 3], [1, 1, 2, 3], [1, 2, 3, 4], [1, 2, 4, 4]];

pub fn oracle_slpr(temp: usize, cl: usize, orientation: Table3Orientation) -> usize {
    let v = match orientation {
        Table3Orientation::TempDominant => TABLE3[cl][temp],
        Table3Orientation::AsPrintedRows => TABLE3[temp][cl],
    };
    v as usize - 1
}

pub fn oracle_duration(slpr: usize, max_ms: f64) -> Option<f64> {
    match slpr {
        3 => Some(max_ms),
        2 => Some(max_ms * 5.0 / 7.0),
        _ => None,
    }
}

pub fn oracle_flags(residual: f64, capacity: f64, ts: f64, tr: f64) -> (bool, bool) {
    (residual / capacity < 0.4, tr > 0.0 && ts / tr > 1.0)
}

// ---- log replay -------------------------------------------------------------

#[derive(Default)]
struct Uplink {
    s: u64,
    r: u64,
    sl: u64,
    arrivals: Vec<f64>,
}

#[derive(Default)]
struct NodeReplay {
    uplinks: BTreeMap<NodeId, Uplink>,
    ts: Option<f64>,
    tr: Option<f64>,
    last_arrival: Option<f64>,
    consumed: u64,
    dead: bool,
    shots: u32,
}

struct ShotCopy {
    items: BTreeMap<NodeId, (PhRecord, f64)>,
    taus: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct ReplaySummary {
    pub shots: usize,
    pub evaluations: usize,
    pub grants: usize,
    pub deaths: usize,
    pub consumed_nj: u64,
    /// Grant durations per (sleeper, shot).
    pub grants_by_shot: BTreeMap<(NodeId, u32), Vec<f64>>,
    pub max_shots_per_node: u32,
}

fn scaled(base_nj: u64, bytes: u32, ref_bytes: u32) -> u64 {
    // round half up of base * bytes / ref
    let num = base_nj as u128 * bytes as u128;
    let q = num / ref_bytes as u128;
    let rem = num % ref_bytes as u128;
    (if 2 * rem >= ref_bytes as u128 { q + 1 } else { q }) as u64
}

fn nj(mj: f64) -> u64 {
    (mj * 1e6).round() as u64
}

fn ewma(prev: Option<f64>, x: f64, a: f64) -> f64 {
    prev.map_or(x, |m| a * x + (1.0 - a) * m)
}

/// Replays a run's log, rebuilding every node's counters, rates, service means
/// and battery, and checks each sleep shot and controller evaluation against
/// them. `preset` lists energy already spent before the run started.
pub fn replay(cfg: &ScenarioConfig, log: &[LogRecord], preset: &[(NodeId, f64)]) -> Result<ReplaySummary, String> {
    let n = cfg.nodes.count;
    let window_ms = cfg.estimators.rate_window_s * 1000.0;
    let alpha = cfg.estimators.ewma_alpha;
    let capacity = (cfg.energy.capacity_j * 1e9).round() as u64;
    let (tx, rx, idle) = (nj(cfg.energy.data_tx_mj), nj(cfg.energy.data_rx_mj), nj(cfg.energy.idle_mj_per_tick));
    let ref_bytes = cfg.packets.data_bytes;
    let max_sleep = cfg.fep.max_sleep_ms;
    let mut nodes: Vec<NodeReplay> = (0..n).map(|_| NodeReplay::default()).collect();
    for &(id, j) in preset {
        nodes[id as usize].consumed = ((j * 1e9).round() as u64).min(capacity);
    }
    let mut shots: BTreeMap<(NodeId, u32), ShotCopy> = BTreeMap::new();
    let mut out = ReplaySummary::default();
    let mut last_eval: Option<(NodeId, NodeId, u32, Option<f64>)> = None;

    fn spend(node: &mut NodeReplay, amount: u64, capacity: u64) {
        if node.dead {
            return;
        }
        node.consumed = (node.consumed + amount).min(capacity);
        if node.consumed >= capacity {
            node.dead = true;
        }
    }

    for (i, rec) in log.iter().enumerate() {
        let t = rec.time;
        let at = |msg: String| format!("record {i} (t={t}, node {:?}): {msg}", rec.node);
        match &rec.entry {
            LogEntry::IdleTick => {
                for node in nodes.iter_mut() {
                    spend(node, idle, capacity);
                }
                continue;
            }
            LogEntry::Partition { .. } => continue,
            _ => {}
        }
        let Some(id) = rec.node else { return Err(at("record without node".into())) };
        let node = &mut nodes[id as usize];
        match &rec.entry {
            LogEntry::Tx { bytes, .. } => {
                if node.dead {
                    return Err(at("transmission by a dead node".into()));
                }
                spend(node, scaled(tx, *bytes, ref_bytes), capacity);
            }
            LogEntry::Rx { bytes, .. } => {
                if node.dead {
                    return Err(at("reception by a dead node".into()));
                }
                spend(node, scaled(rx, *bytes, ref_bytes), capacity);
            }
            LogEntry::Death => {
                if !node.dead {
                    return Err(at(format!("death logged with {} of {capacity} nJ spent", node.consumed)));
                }
                out.deaths += 1;
            }
            LogEntry::Arrival { from } => {
                let u = node.uplinks.entry(*from).or_default();
                u.s += 1;
                u.arrivals.push(t);
                if let Some(prev) = node.last_arrival {
                    node.tr = Some(ewma(node.tr, t - prev, alpha));
                }
                node.last_arrival = Some(t);
            }
            LogEntry::Serviced { sojourn_ms } => {
                node.ts = Some(ewma(node.ts, *sojourn_ms, alpha));
            }
            LogEntry::Forwarded { uplink } => {
                let u = node.uplinks.get_mut(uplink).ok_or_else(|| at("forward without arrival".into()))?;
                u.r += 1;
                if u.r > u.s {
                    return Err(at("r exceeds s".into()));
                }
            }
            LogEntry::SleepShot { shot, items, uplink_taus, e, ol, residual_j, capacity_j, ts, tr, .. } => {
                node.shots += 1;
                if *shot != node.shots {
                    return Err(at(format!("shot numbered {shot}, expected {}", node.shots)));
                }
                if *shot > cfg.fep.sleep_budget {
                    return Err(at(format!("shot {shot} exceeds budget {}", cfg.fep.sleep_budget)));
                }
                let rts = node.ts.unwrap_or(0.0);
                let rtr = node.tr.unwrap_or(0.0);
                let residual = (capacity - node.consumed) as f64 / 1e9;
                if !close(*ts, rts) || !close(*tr, rtr) {
                    return Err(at(format!("ts/tr {ts}/{tr}, replay {rts}/{rtr}")));
                }
                if !close(*residual_j, residual) || !close(*capacity_j, capacity as f64 / 1e9) {
                    return Err(at(format!("residual {residual_j} J, replay {residual} J")));
                }
                let (oe, ool) = oracle_flags(residual, capacity as f64 / 1e9, rts, rtr);
                if (*e, *ol) != (oe, ool) {
                    return Err(at(format!("flags ({e},{ol}), oracle ({oe},{ool})")));
                }
                if !(oe || ool) {
                    return Err(at("shot without an enable flag".into()));
                }
                let uplinks: Vec<(NodeId, u64, f64)> = node
                    .uplinks
                    .iter()
                    .map(|(&u, e)| (u, e.arrivals.iter().filter(|&&a| a >= t - window_ms && a <= t).count() as u64, 0.0))
                    .filter(|&(_, c, _)| c > 0)
                    .map(|(u, c, _)| (u, c, c as f64 * 1000.0 / window_ms))
                    .collect();
                if items.len() != uplinks.len() || uplink_taus.len() != uplinks.len() {
                    return Err(at(format!("{} items for {} uplinks", items.len(), uplinks.len())));
                }
                let mut copy = ShotCopy { items: BTreeMap::new(), taus: uplink_taus.clone() };
                for ((item, &logged_tau), &(u, _, tau)) in items.iter().zip(uplink_taus).zip(&uplinks) {
                    let e = &node.uplinks[&u];
                    let want = PhRecord { s: e.s, r: e.r, sl: e.sl };
                    if item.addressee != u || item.record != want || !close(item.tau, tau) || !close(logged_tau, tau) {
                        return Err(at(format!("item {item:?} disagrees with replay ({u}, {want:?}, {tau})")));
                    }
                    copy.items.insert(u, (item.record, item.tau));
                }
                for &(u, _, _) in &uplinks {
                    node.uplinks.get_mut(&u).unwrap().sl += 1;
                }
                out.max_shots_per_node = out.max_shots_per_node.max(node.shots);
                shots.insert((id, *shot), copy);
                out.shots += 1;
            }
            LogEntry::SlreqEval { requester, shot, input, trace } => {
                let copy = shots.get(&(*requester, *shot)).ok_or_else(|| at("evaluation of an unknown shot".into()))?;
                let &(record, tau) = copy.items.get(&id).ok_or_else(|| at("evaluator was not addressed".into()))?;
                if input.record != record || input.tau_ab != tau || input.uplink_taus != copy.taus {
                    return Err(at("evaluation inputs differ from the shot".into()));
                }
                if input.max_sleep_ms != max_sleep || input.variant != cfg.formula_variant() {
                    return Err(at("evaluation parameters differ from the config".into()));
                }
                let (cl, low, high) = oracle_cl(input.tau_ab, &input.uplink_taus);
                let ph = oracle_ph(record.s, record.r, record.sl, cfg.fep.ph_variant);
                let ccs = oracle_ccs(&input.views, cfg.fep.ccs_variant);
                for (name, got, want) in [
                    ("cl", trace.cl, cl),
                    ("cl_low", trace.cl_bounds.low, low),
                    ("cl_high", trace.cl_bounds.high, high),
                    ("ph", trace.ph, ph),
                    ("ccs", trace.ccs, ccs),
                ] {
                    if !close(got, want) {
                        return Err(at(format!("{name} = {got}, oracle {want}")));
                    }
                }
                let cl_class = oracle_cl_class(cl, low, high);
                let temp = TABLE2[unit_class(ph)][unit_class(ccs)] as usize - 1;
                let slpr = oracle_slpr(temp, cl_class, cfg.fep.table3_orientation);
                let grades = [trace.cl_grade, trace.ph_grade, trace.ccs_grade, trace.temp, trace.slpr].map(grade_index);
                if grades != [cl_class, unit_class(ph), unit_class(ccs), temp, slpr] {
                    return Err(at(format!("grades {grades:?}, oracle {:?}", [cl_class, unit_class(ph), unit_class(ccs), temp, slpr])));
                }
                let want = oracle_duration(slpr, max_sleep);
                let got = match trace.decision {
                    SleepDecision::Grant { duration_ms } => Some(duration_ms),
                    SleepDecision::Deny => None,
                };
                if got.is_some() != want.is_some() || got.zip(want).is_some_and(|(a, b)| !close(a, b)) {
                    return Err(at(format!("decision {got:?}, oracle {want:?}")));
                }
                last_eval = Some((id, *requester, *shot, want));
                out.evaluations += 1;
            }
            LogEntry::SleepGrant { sleeper, shot, duration_ms, until, .. } => {
                match last_eval {
                    Some((g, s, k, Some(d))) if g == id && s == *sleeper && k == *shot && close(d, *duration_ms) => {}
                    _ => return Err(at("grant without a matching granting evaluation".into())),
                }
                if !close(*until, t + duration_ms) {
                    return Err(at("grant window does not start now".into()));
                }
                out.grants += 1;
                out.grants_by_shot.entry((*sleeper, *shot)).or_default().push(*duration_ms);
            }
            _ => {}
        }
    }
    out.consumed_nj = nodes.iter().map(|n| n.consumed).sum();
    Ok(out)
}

/// Per-sleeper sleep given up against full-length naps, summed over granted shots.
pub fn lost_sleep_by_node(summary: &ReplaySummary, max_sleep: f64) -> BTreeMap<NodeId, f64> {
    let mut lost = BTreeMap::new();
    for (&(sleeper, _), durations) in &summary.grants_by_shot {
        let best = durations.iter().cloned().fold(0.0, f64::max);
        *lost.entry(sleeper).or_insert(0.0) += max_sleep - best;
    }
    lost
}

/// Checks the lifetime lost-sleep bound and the grant-duration set for one run.
pub fn check_sleep_arithmetic(cfg: &ScenarioConfig, summary: &ReplaySummary) -> Result<(), String> {
    let l = cfg.fep.max_sleep_ms;
    for (key, durations) in &summary.grants_by_shot {
        for &d in durations {
            if !close(d, l) && !close(d, l * 5.0 / 7.0) {
                return Err(format!("shot {key:?} granted {d} ms with L = {l}"));
            }
        }
    }
    let bound = cfg.fep.sleep_budget as f64 * l * 0.286;
    for (node, lost) in lost_sleep_by_node(summary, l) {
        if lost > bound + TOL {
            return Err(format!("node {node} lost {lost} ms of sleep, bound {bound}"));
        }
    }
    Ok(())
}

// ---- metrics ----------------------------------------------------------------

/// The report metrics recomputed from raw log records. Partition samples,
/// sessions and node count come from the config and log only.
pub fn recompute_metrics(cfg: &ScenarioConfig, log: &[LogRecord], sessions: usize, consumed_nj: u64) -> Vec<(&'static str, Option<f64>)> {
    let n = cfg.nodes.count as f64;
    let s = sessions as f64;
    let mut sent = 0u64;
    let mut delivered = 0u64;
    let mut delay = 0.0;
    let mut tx = 0u64;
    let mut control = 0u64;
    let mut repair = 0u64;
    let mut breaks = 0u64;
    let mut partitions = 0u64;
    for r in log {
        match &r.entry {
            LogEntry::DataSent { .. } => sent += 1,
            LogEntry::DataDelivered { delay_ms, .. } => {
                delivered += 1;
                delay += delay_ms;
            }
            LogEntry::Tx { packet, cause, .. } => {
                tx += 1;
                if *packet != PacketKind::Data {
                    control += 1;
                }
                if *cause == Some(fep_core::sim::log::Cause::BreakRecovery) {
                    repair += 1;
                }
            }
            LogEntry::LinkBreak { .. } => breaks += 1,
            LogEntry::Partition { components } => partitions = partitions.max(*components),
            _ => {}
        }
    }
    let per_session = |x: f64| if sessions == 0 { None } else { Some(x / s) };
    vec![
        ("delivery_ratio_pct", if sessions == 0 || sent == 0 { None } else { Some(delivered as f64 * 100.0 / sent as f64) }),
        ("per_node_energy_j", Some(consumed_nj as f64 / 1e9 / n)),
        ("per_node_message_overhead", Some(tx as f64 / n)),
        ("per_node_control_overhead", Some(control as f64 / n)),
        ("delay_per_session_ms", per_session(delay)),
        ("link_breaks_per_session", per_session(breaks as f64)),
        ("repair_cost_per_node_per_session", if sessions == 0 { None } else { Some(repair as f64 / (s * n)) }),
        ("max_partitions", Some(partitions as f64)),
    ]
}

pub fn reported_metrics(r: &MetricsReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("delivery_ratio_pct", r.delivery_ratio_pct),
        ("per_node_energy_j", Some(r.per_node_energy_j)),
        ("per_node_message_overhead", Some(r.per_node_message_overhead)),
        ("per_node_control_overhead", Some(r.per_node_control_overhead)),
        ("delay_per_session_ms", r.delay_per_session_ms),
        ("link_breaks_per_session", r.link_breaks_per_session),
        ("repair_cost_per_node_per_session", r.repair_cost_per_node_per_session),
        ("max_partitions", Some(r.max_partitions as f64)),
    ]
}

/// Exact comparison of recomputed and reported metrics.
pub fn check_metrics(cfg: &ScenarioConfig, out: &RunOutput, consumed_nj: u64) -> Result<(), String> {
    let want = recompute_metrics(cfg, &out.log, out.report.sessions, consumed_nj);
    let got = reported_metrics(&out.report);
    for ((name, w), (_, g)) in want.iter().zip(&got) {
        if w != g {
            return Err(format!("{name}: report {g:?}, recomputed {w:?}"));
        }
    }
    Ok(())
}

pub fn improvement_oracle(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        0.0
    } else {
        (x - y).abs() * 100.0 / if x > y { x } else { y }
    }
}

// ---- fixtures ---------------------------------------------------------------

/// Node ids of the two-uplink fixture.
pub const U1: NodeId = 0;
pub const U2: NodeId = 1;
pub const B: NodeId = 2;
pub const D: NodeId = 3;
pub const C: NodeId = 4;

/// Router `B` relays for two uplinks towards `D`. `U1` has a detour through
/// `C`; `U2` has none. `B` starts below the energy threshold.
pub fn two_uplink_fixture() -> (ScenarioConfig, Vec<Point>, Vec<(NodeId, f64)>) {
    let mut cfg = ScenarioConfig::default();
    cfg.run.protocol = Protocol::Fep;
    cfg.run.sim_time_s = 3.0;
    cfg.nodes.count = 5;
    cfg.nodes.range_min_m = 100.0;
    cfg.nodes.range_max_m = 100.0;
    cfg.nodes.speed_min_mps = 0.0;
    cfg.nodes.speed_max_mps = 0.0;
    cfg.energy.capacity_j = 10.0;
    cfg.traffic.sessions = 0;
    cfg.traffic.explicit = vec![
        SessionSpec { src: U1, dst: D, rate_pps: 20.0, packets: 20, start_s: 0.1 },
        SessionSpec { src: U2, dst: D, rate_pps: 50.0, packets: 2000, start_s: 0.05 },
    ];
    let positions = vec![
        Point::new(100.0, 200.0),
        Point::new(180.0, 120.0),
        Point::new(180.0, 200.0),
        Point::new(260.0, 200.0),
        Point::new(180.0, 250.0),
    ];
    (cfg, positions, vec![(B, 6.5)])
}

pub fn run_fixture(cfg: &ScenarioConfig, positions: &[Point], preset: &[(NodeId, f64)]) -> RunOutput {
    let mut sim = Simulator::new(cfg.clone()).expect("valid fixture");
    sim.place_nodes(positions);
    for &(id, j) in preset {
        sim.preset_consumed(id, j);
    }
    sim.record_log(true);
    sim.run()
}

/// Five static nodes in a small arena with a low battery, drawn from `seed`.
pub fn tiny_fixture(seed: u64) -> ScenarioConfig {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ScenarioConfig::default();
    cfg.run.seed = seed;
    cfg.run.protocol = Protocol::Fep;
    cfg.run.sim_time_s = rng.random_range(2.0..4.0);
    cfg.nodes.count = 5;
    cfg.arena.width_m = rng.random_range(120.0..220.0);
    cfg.arena.height_m = rng.random_range(60.0..140.0);
    cfg.nodes.speed_min_mps = 0.0;
    cfg.nodes.speed_max_mps = rng.random_range(0.0..10.0);
    cfg.traffic.sessions = rng.random_range(1..=3);
    cfg.traffic.packets_per_session = rng.random_range(5..40);
    cfg.traffic.rate_pps = rng.random_range(10.0..80.0);
    cfg.traffic.start_min_s = 0.0;
    cfg.traffic.start_max_s = 1.0;
    cfg.energy.capacity_j = rng.random_range(0.05..0.5);
    cfg.fep.sleep_budget = rng.random_range(1..=4);
    cfg.fep.max_sleep_ms = rng.random_range(10.0..100.0);
    cfg.fep.cooldown_ms = rng.random_range(0.0..100.0);
    cfg.fep.check_period_ms = rng.random_range(200.0..1000.0);
    cfg
}

/// Desk-scale scenario of the paired comparison.
pub fn desk_scenario(seed: u64, protocol: Protocol) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.run.seed = seed;
    cfg.run.protocol = protocol;
    cfg.run.sim_time_s = 200.0;
    cfg.arena.width_m = 600.0;
    cfg.arena.height_m = 600.0;
    cfg.nodes.count = 60;
    cfg.nodes.range_min_m = 100.0;
    cfg.nodes.range_max_m = 100.0;
    cfg.nodes.speed_min_mps = 5.0;
    cfg.nodes.speed_max_mps = 15.0;
    cfg.traffic.sessions = 20;
    cfg.traffic.packets_per_session = 200;
    cfg.traffic.rate_pps = 4.0;
    cfg.energy.capacity_j = 7.0;
    cfg
}
