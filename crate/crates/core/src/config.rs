//! Scenario configuration.
//!
//! Scenarios are archived as TOML: flat `key = value` pairs grouped in
//! sections. Every key is optional and falls back to the desk-scale defaults
//! below; unknown keys are rejected.
//!
//! ```toml
//! [run]
//! seed = 7
//! protocol = "fep"
//! sim_time_s = 200.0
//!
//! [nodes]
//! count = 60
//! range_min_m = 100.0
//! range_max_m = 100.0
//!
//! [[traffic.session]]   # optional explicit sessions replace random ones
//! src = 0
//! dst = 5
//! rate_pps = 4.0
//! packets = 200
//! start_s = 1.0
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::ConfigError;
use crate::slreq::{CcsVariant, FormulaVariant, PhVariant, Table3Orientation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Plain on-demand routing: one route per reply, rediscovery on every break.
    #[default]
    Baseline,
    /// Three-route replies, cached failover and fuzzy sleep grants.
    Fep,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Baseline => "baseline",
            Protocol::Fep => "fep",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Protocol::Baseline),
            "fep" => Ok(Protocol::Fep),
            other => Err(format!("unknown protocol {other:?} (expected baseline or fep)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub sim_time_s: f64,
    pub protocol: Protocol,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 1, sim_time_s: 200.0, protocol: Protocol::Baseline }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaSection {
    pub width_m: f64,
    pub height_m: f64,
}

impl Default for ArenaSection {
    fn default() -> Self {
        Self { width_m: 600.0, height_m: 600.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NodesSection {
    pub count: usize,
    pub range_min_m: f64,
    pub range_max_m: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub mobility_tick_ms: f64,
}

impl Default for NodesSection {
    fn default() -> Self {
        Self {
            count: 60,
            range_min_m: 100.0,
            range_max_m: 100.0,
            speed_min_mps: 5.0,
            speed_max_mps: 15.0,
            mobility_tick_ms: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub src: u32,
    pub dst: u32,
    pub rate_pps: f64,
    pub packets: u64,
    pub start_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficSection {
    pub sessions: usize,
    pub packets_per_session: u64,
    pub rate_pps: f64,
    pub start_min_s: f64,
    pub start_max_s: f64,
    #[serde(rename = "session", skip_serializing_if = "Vec::is_empty")]
    pub explicit: Vec<SessionSpec>,
}

impl Default for TrafficSection {
    fn default() -> Self {
        Self {
            sessions: 20,
            packets_per_session: 200,
            rate_pps: 4.0,
            start_min_s: 1.0,
            start_max_s: 100.0,
            explicit: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub capacity_j: f64,
    /// Transmit cost of one reference-size data packet.
    pub data_tx_mj: f64,
    pub data_rx_mj: f64,
    pub idle_mj_per_tick: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self { capacity_j: 25.0, data_tx_mj: 5.0, data_rx_mj: 3.0, idle_mj_per_tick: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    pub service_rate_pps: f64,
    pub propagation_ms: f64,
    pub queue_limit: usize,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self { service_rate_pps: 200.0, propagation_ms: 1.0, queue_limit: 200 }
    }
}

/// Packet sizes in bytes. Energy per packet scales with size relative to
/// `data_bytes`, the reference data packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PacketSection {
    pub data_bytes: u32,
    pub fep_metadata_bytes: u32,
    pub rreq_base: u32,
    pub rreq_per_hop: u32,
    pub rrep_base: u32,
    pub rrep_per_hop: u32,
    pub route_error: u32,
    pub switch_notice: u32,
    pub sleep_message: u32,
}

impl Default for PacketSection {
    fn default() -> Self {
        Self {
            data_bytes: 512,
            fep_metadata_bytes: 24,
            rreq_base: 64,
            rreq_per_hop: 8,
            rrep_base: 64,
            rrep_per_hop: 8,
            route_error: 64,
            switch_notice: 64,
            sleep_message: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingSection {
    pub max_hops: usize,
    pub collection_window_ms: f64,
    pub discovery_timeout_ms: f64,
    pub max_discovery_attempts: u32,
    /// Pause after a discovery gave up before the source floods again.
    pub discovery_holdoff_ms: f64,
    pub source_buffer: usize,
    /// Cached alternatives older than this are not switched to.
    pub alternate_max_age_ms: f64,
}

impl Default for RoutingSection {
    fn default() -> Self {
        Self {
            max_hops: 16,
            collection_window_ms: 30.0,
            discovery_timeout_ms: 400.0,
            max_discovery_attempts: 3,
            discovery_holdoff_ms: 1000.0,
            source_buffer: 64,
            alternate_max_age_ms: 1500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FepSection {
    pub max_sleep_ms: f64,
    pub sleep_budget: u32,
    pub cooldown_ms: f64,
    pub check_period_ms: f64,
    pub ph_variant: PhVariant,
    pub ccs_variant: CcsVariant,
    pub table3_orientation: Table3Orientation,
}

impl Default for FepSection {
    fn default() -> Self {
        Self {
            max_sleep_ms: 50.0,
            sleep_budget: 10,
            cooldown_ms: 50.0,
            check_period_ms: 1000.0,
            ph_variant: PhVariant::Semantic,
            ccs_variant: CcsVariant::Semantic,
            table3_orientation: Table3Orientation::TempDominant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub rate_window_s: f64,
    pub ewma_alpha: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { rate_window_s: 5.0, ewma_alpha: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub partition_period_s: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self { partition_period_s: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub run: RunSection,
    pub arena: ArenaSection,
    pub nodes: NodesSection,
    pub traffic: TrafficSection,
    pub energy: EnergySection,
    pub radio: RadioSection,
    pub packets: PacketSection,
    pub routing: RoutingSection,
    pub fep: FepSection,
    pub estimators: EstimatorSection,
    pub sampling: SamplingSection,
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key, reason: format!("must be positive, got {v}") })
    }
}

fn non_negative(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key, reason: format!("must be non-negative, got {v}") })
    }
}

fn check(key: &'static str, ok: bool, reason: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid { key, reason: reason.into() })
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn formula_variant(&self) -> FormulaVariant {
        FormulaVariant { ph: self.fep.ph_variant, ccs: self.fep.ccs_variant, table3: self.fep.table3_orientation }
    }

    pub fn set_formula_variant(&mut self, v: FormulaVariant) {
        self.fep.ph_variant = v.ph;
        self.fep.ccs_variant = v.ccs;
        self.fep.table3_orientation = v.table3;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("run.sim_time_s", self.run.sim_time_s)?;
        positive("arena.width_m", self.arena.width_m)?;
        positive("arena.height_m", self.arena.height_m)?;
        check("nodes.count", self.nodes.count >= 2, "at least two nodes are required")?;
        check("nodes.count", self.nodes.count <= u32::MAX as usize, "too many nodes")?;
        positive("nodes.range_min_m", self.nodes.range_min_m)?;
        positive("nodes.range_max_m", self.nodes.range_max_m)?;
        check(
            "nodes.range_max_m",
            self.nodes.range_min_m <= self.nodes.range_max_m,
            "must not be below nodes.range_min_m",
        )?;
        non_negative("nodes.speed_min_mps", self.nodes.speed_min_mps)?;
        non_negative("nodes.speed_max_mps", self.nodes.speed_max_mps)?;
        check(
            "nodes.speed_max_mps",
            self.nodes.speed_min_mps <= self.nodes.speed_max_mps,
            "must not be below nodes.speed_min_mps",
        )?;
        positive("nodes.mobility_tick_ms", self.nodes.mobility_tick_ms)?;

        if self.traffic.explicit.is_empty() {
            if self.traffic.sessions > 0 {
                positive("traffic.rate_pps", self.traffic.rate_pps)?;
                non_negative("traffic.start_min_s", self.traffic.start_min_s)?;
                check(
                    "traffic.start_max_s",
                    self.traffic.start_min_s <= self.traffic.start_max_s,
                    "must not be below traffic.start_min_s",
                )?;
            }
        } else {
            for s in &self.traffic.explicit {
                let n = self.nodes.count as u32;
                check("traffic.session", s.src < n && s.dst < n, format!("node id out of range in {s:?}"))?;
                check("traffic.session", s.src != s.dst, format!("source equals destination in {s:?}"))?;
                positive("traffic.session.rate_pps", s.rate_pps)?;
                non_negative("traffic.session.start_s", s.start_s)?;
            }
        }

        positive("energy.capacity_j", self.energy.capacity_j)?;
        non_negative("energy.data_tx_mj", self.energy.data_tx_mj)?;
        non_negative("energy.data_rx_mj", self.energy.data_rx_mj)?;
        non_negative("energy.idle_mj_per_tick", self.energy.idle_mj_per_tick)?;
        positive("radio.service_rate_pps", self.radio.service_rate_pps)?;
        non_negative("radio.propagation_ms", self.radio.propagation_ms)?;
        check("radio.queue_limit", self.radio.queue_limit > 0, "must be at least 1")?;
        check("packets.data_bytes", self.packets.data_bytes > 0, "must be at least 1")?;
        check("routing.max_hops", self.routing.max_hops >= 1, "must be at least 1")?;
        non_negative("routing.collection_window_ms", self.routing.collection_window_ms)?;
        positive("routing.discovery_timeout_ms", self.routing.discovery_timeout_ms)?;
        check("routing.max_discovery_attempts", self.routing.max_discovery_attempts >= 1, "must be at least 1")?;
        non_negative("routing.discovery_holdoff_ms", self.routing.discovery_holdoff_ms)?;
        positive("routing.alternate_max_age_ms", self.routing.alternate_max_age_ms)?;
        check("routing.source_buffer", self.routing.source_buffer > 0, "must be at least 1")?;
        positive("fep.max_sleep_ms", self.fep.max_sleep_ms)?;
        non_negative("fep.cooldown_ms", self.fep.cooldown_ms)?;
        positive("fep.check_period_ms", self.fep.check_period_ms)?;
        positive("estimators.rate_window_s", self.estimators.rate_window_s)?;
        check(
            "estimators.ewma_alpha",
            self.estimators.ewma_alpha > 0.0 && self.estimators.ewma_alpha <= 1.0,
            "must lie in (0, 1]",
        )?;
        positive("sampling.partition_period_s", self.sampling.partition_period_s)?;
        Ok(())
    }
}
