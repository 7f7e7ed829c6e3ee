//! Deterministic MANET simulator with a fuzzy sleep-grant overlay.
//!
//! * [`slreq`]: the SL-REQ controller (pure functions).
//! * [`stats`]: per-node counters, rate estimators and energy accounts.
//! * [`routing`]: source routes, the three-route cache and flood bookkeeping.
//! * [`sleep`]: request budget and per-edge suspensions.
//! * [`sim`]: the discrete-event engine.
//! * [`metrics`]: per-run report, CSV/JSON export, paired aggregation.

pub mod config;
pub mod error;
pub mod metrics;
pub mod routing;
pub mod sim;
pub mod sleep;
pub mod slreq;
pub mod stats;

pub type NodeId = u32;

pub use config::{Protocol, ScenarioConfig};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use sim::{run, run_logged, RunOutput, Simulator};
