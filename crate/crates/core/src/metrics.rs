//! Per-run metrics, CSV/JSON export and multi-seed aggregation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::Protocol;
use crate::error::MetricsError;

/// Raw counters accumulated during one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawCounters {
    pub data_sent: u64,
    pub data_delivered: u64,
    pub data_dropped: u64,
    pub total_delay_ms: f64,
    pub messages: u64,
    pub control_messages: u64,
    pub rreq_count: u64,
    pub discoveries: u64,
    pub repair_messages: u64,
    pub link_breaks: u64,
    pub route_switches: u64,
    pub sleep_shots: u64,
    pub grants: u64,
    pub denies: u64,
    pub deaths: u64,
    pub max_partitions: u64,
    pub energy_consumed_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub nodes: usize,
    pub sessions: usize,
    pub delivery_ratio_pct: Option<f64>,
    pub per_node_energy_j: f64,
    pub per_node_message_overhead: f64,
    pub per_node_control_overhead: f64,
    pub delay_per_session_ms: Option<f64>,
    pub link_breaks_per_session: Option<f64>,
    pub repair_cost_per_node_per_session: Option<f64>,
    pub max_partitions: u64,
    pub raw: RawCounters,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Applies each metric quotient to the raw counters. Quotients over zero
/// sessions (or zero sent packets) are absent.
pub fn finalize(raw: RawCounters, protocol: Protocol, seed: u64, nodes: usize, sessions: usize) -> MetricsReport {
    let n = nodes as f64;
    let s = sessions as f64;
    let delivery_ratio_pct = if sessions == 0 {
        None
    } else {
        ratio(raw.data_delivered as f64 * 100.0, raw.data_sent as f64)
    };
    MetricsReport {
        protocol,
        seed,
        nodes,
        sessions,
        delivery_ratio_pct,
        per_node_energy_j: raw.energy_consumed_j / n,
        per_node_message_overhead: raw.messages as f64 / n,
        per_node_control_overhead: raw.control_messages as f64 / n,
        delay_per_session_ms: ratio(raw.total_delay_ms, s),
        link_breaks_per_session: ratio(raw.link_breaks as f64, s),
        repair_cost_per_node_per_session: ratio(raw.repair_messages as f64, s * n),
        max_partitions: raw.max_partitions,
        raw,
    }
}

/// Relative advantage of one value over another, in percent of the larger.
pub fn improvement_pct(x: f64, y: f64) -> f64 {
    let max = x.max(y);
    if max == 0.0 {
        0.0
    } else {
        (x - y).abs() * 100.0 / max
    }
}

pub const CSV_COLUMNS: [&str; 26] = [
    "protocol",
    "seed",
    "nodes",
    "sessions",
    "delivery_ratio_pct",
    "per_node_energy_j",
    "per_node_message_overhead",
    "per_node_control_overhead",
    "delay_per_session_ms",
    "link_breaks_per_session",
    "repair_cost_per_node_per_session",
    "max_partitions",
    "data_sent",
    "data_delivered",
    "data_dropped",
    "messages",
    "control_messages",
    "rreq_count",
    "discoveries",
    "repair_messages",
    "link_breaks",
    "route_switches",
    "sleep_shots",
    "grants",
    "denies",
    "deaths",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        let r = &self.raw;
        let fields = [
            self.protocol.to_string(),
            self.seed.to_string(),
            self.nodes.to_string(),
            self.sessions.to_string(),
            opt(self.delivery_ratio_pct),
            self.per_node_energy_j.to_string(),
            self.per_node_message_overhead.to_string(),
            self.per_node_control_overhead.to_string(),
            opt(self.delay_per_session_ms),
            opt(self.link_breaks_per_session),
            opt(self.repair_cost_per_node_per_session),
            self.max_partitions.to_string(),
            r.data_sent.to_string(),
            r.data_delivered.to_string(),
            r.data_dropped.to_string(),
            r.messages.to_string(),
            r.control_messages.to_string(),
            r.rreq_count.to_string(),
            r.discoveries.to_string(),
            r.repair_messages.to_string(),
            r.link_breaks.to_string(),
            r.route_switches.to_string(),
            r.sleep_shots.to_string(),
            r.grants.to_string(),
            r.denies.to_string(),
            r.deaths.to_string(),
        ];
        fields.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::csv_header(), self.csv_row())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Headline metrics by name, for aggregation.
    pub fn metric_values(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("delivery_ratio_pct", self.delivery_ratio_pct),
            ("per_node_energy_j", Some(self.per_node_energy_j)),
            ("per_node_message_overhead", Some(self.per_node_message_overhead)),
            ("per_node_control_overhead", Some(self.per_node_control_overhead)),
            ("delay_per_session_ms", self.delay_per_session_ms),
            ("link_breaks_per_session", self.link_breaks_per_session),
            ("repair_cost_per_node_per_session", self.repair_cost_per_node_per_session),
            ("max_partitions", Some(self.max_partitions as f64)),
            ("rreq_count", Some(self.raw.rreq_count as f64)),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        let median = median(values)?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Stats { median, mean, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub metrics: BTreeMap<String, Stats>,
}

/// Order statistics per metric over a set of runs. Absent values are skipped.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Summary, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rep in reports {
        for (name, value) in rep.metric_values() {
            let col = columns.entry(name.to_string()).or_default();
            if let Some(v) = value {
                col.push(v);
            }
        }
    }
    let metrics = columns
        .into_iter()
        .filter_map(|(name, vals)| Stats::of(&vals).map(|s| (name, s)))
        .collect();
    Ok(Summary { runs: reports.len(), metrics })
}

/// Per-seed differences `fep - baseline` for every headline metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub seeds: Vec<u64>,
    pub deltas: BTreeMap<String, Vec<f64>>,
    pub median_delta: BTreeMap<String, f64>,
    /// Improvement percentage of the per-seed medians of each metric.
    pub improvement_pct: BTreeMap<String, f64>,
}

pub fn paired(baseline: &[MetricsReport], fep: &[MetricsReport]) -> Result<PairedSummary, MetricsError> {
    if baseline.is_empty() || fep.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut seeds_b: Vec<u64> = baseline.iter().map(|r| r.seed).collect();
    let mut seeds_f: Vec<u64> = fep.iter().map(|r| r.seed).collect();
    seeds_b.sort_unstable();
    seeds_f.sort_unstable();
    if seeds_b != seeds_f || seeds_b.windows(2).any(|w| w[0] == w[1]) {
        return Err(MetricsError::SeedMismatch);
    }
    let mut deltas: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut base_vals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut fep_vals: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &seed in &seeds_b {
        let b = baseline.iter().find(|r| r.seed == seed).expect("seed present");
        let f = fep.iter().find(|r| r.seed == seed).expect("seed present");
        for ((name, bv), (_, fv)) in b.metric_values().into_iter().zip(f.metric_values()) {
            if let (Some(bv), Some(fv)) = (bv, fv) {
                deltas.entry(name.to_string()).or_default().push(fv - bv);
                base_vals.entry(name.to_string()).or_default().push(bv);
                fep_vals.entry(name.to_string()).or_default().push(fv);
            }
        }
    }
    let median_delta = deltas.iter().filter_map(|(k, v)| median(v).map(|m| (k.clone(), m))).collect();
    let improvement_pct = base_vals
        .iter()
        .filter_map(|(k, bv)| {
            let fv = fep_vals.get(k)?;
            Some((k.clone(), improvement_pct(median(fv)?, median(bv)?)))
        })
        .collect();
    Ok(PairedSummary { seeds: seeds_b, deltas, median_delta, improvement_pct })
}

/// CSV block for a paired comparison: one row per run plus an
/// `improvement_pct` row holding the improvement of the medians.
pub fn comparison_csv(baseline: &[MetricsReport], fep: &[MetricsReport]) -> Result<String, MetricsError> {
    let summary = paired(baseline, fep)?;
    let mut out = String::new();
    writeln!(out, "{}", MetricsReport::csv_header()).unwrap();
    for rep in baseline.iter().chain(fep.iter()) {
        writeln!(out, "{}", rep.csv_row()).unwrap();
    }
    let nodes = baseline[0].nodes;
    let sessions = baseline[0].sessions;
    let mut row = vec!["improvement_pct".to_string(), String::new(), nodes.to_string(), sessions.to_string()];
    for col in &CSV_COLUMNS[4..] {
        row.push(summary.improvement_pct.get(*col).map(|v| v.to_string()).unwrap_or_default());
    }
    writeln!(out, "{}", row.join(",")).unwrap();
    Ok(out)
}
