use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum SlreqError {
    #[error("value {0} lies outside [0, 1]")]
    OutOfUnitRange(f64),
    #[error("{0} must be finite and non-negative")]
    NonFinite(&'static str),
    #[error("invalid cl bounds [{low}, {high}]")]
    InvalidBounds { low: f64, high: f64 },
    #[error("uplink rate set is empty")]
    EmptyUplinkSet,
    #[error("forwarded count {r} exceeds sent count {s}")]
    ForwardedExceedsSent { r: u64, s: u64 },
    #[error("battery capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),
    #[error("maximum sleep duration must be positive, got {0}")]
    NonPositiveSleep(f64),
    #[error("unknown fuzzy grade {0:?}")]
    UnknownGrade(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("forward recorded for neighbor {0} without a matching arrival")]
    ForwardWithoutArrival(NodeId),
    #[error("energy debit must be non-negative, got {0} J")]
    NegativeDebit(f64),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot aggregate an empty report list")]
    Empty,
    #[error("paired reports do not share the same seed set")]
    SeedMismatch,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Slreq(#[from] SlreqError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
