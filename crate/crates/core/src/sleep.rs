//! Sleep-request budget at the requester and per-edge suspensions at granters.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::NodeId;

/// Installments a node may spend on sleep requests over its lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleepBudget {
    pub used: u32,
    pub cap: u32,
    pub last_shot: Option<f64>,
}

/// Why a request shot was not fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateClosed {
    NotEnabled,
    BudgetSpent,
    CoolingDown,
    NoUplinks,
}

impl SleepBudget {
    pub fn new(cap: u32) -> Self {
        Self { used: 0, cap, last_shot: None }
    }

    pub fn remaining(&self) -> u32 {
        self.cap - self.used
    }

    /// Checks every precondition of a request shot without spending anything.
    pub fn gate(&self, enabled: bool, now: f64, cooldown_ms: f64, uplinks: usize) -> Result<(), GateClosed> {
        if !enabled {
            return Err(GateClosed::NotEnabled);
        }
        if self.used >= self.cap {
            return Err(GateClosed::BudgetSpent);
        }
        if self.last_shot.is_some_and(|t| now - t < cooldown_ms) {
            return Err(GateClosed::CoolingDown);
        }
        if uplinks == 0 {
            return Err(GateClosed::NoUplinks);
        }
        Ok(())
    }

    /// Spends one installment, however many neighbors the shot addresses.
    pub fn spend(&mut self, now: f64) {
        debug_assert!(self.used < self.cap);
        self.used += 1;
        self.last_shot = Some(now);
    }
}

/// Suspensions a granter holds against its downstream neighbors.
#[derive(Debug, Clone, Default)]
pub struct EdgeSleepTable {
    until: BTreeMap<NodeId, f64>,
}

impl EdgeSleepTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn grant(&mut self, sleeper: NodeId, until: f64) {
        let slot = self.until.entry(sleeper).or_insert(until);
        *slot = slot.max(until);
    }

    pub fn is_asleep(&self, sleeper: NodeId, now: f64) -> bool {
        self.until.get(&sleeper).is_some_and(|&u| u > now)
    }

    pub fn until(&self, sleeper: NodeId) -> Option<f64> {
        self.until.get(&sleeper).copied()
    }

    /// Removes suspensions that ended at or before `now`; returns the sleepers released.
    pub fn expire(&mut self, now: f64) -> Vec<NodeId> {
        let done: Vec<NodeId> = self.until.iter().filter(|(_, &u)| u <= now).map(|(&n, _)| n).collect();
        for n in &done {
            self.until.remove(n);
        }
        done
    }

    pub fn clear(&mut self) {
        self.until.clear();
    }

    pub fn len(&self) -> usize {
        self.until.len()
    }

    pub fn is_empty(&self) -> bool {
        self.until.is_empty()
    }
}

/// Lost sleep of one shot: the shortfall of its longest granted nap against `max_ms`.
pub fn lost_sleep(granted_ms: &[f64], max_ms: f64) -> f64 {
    granted_ms.iter().copied().fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d)))).map_or(0.0, |d| max_ms - d)
}
