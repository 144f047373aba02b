//! Rule-table meta-policy and the backup-policy bank.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::programs::{MetaObservation, Metric, Predicate, PrimitiveId};

/// Frames the adversarial indicator must stay above threshold before the
/// default policy switches to Defend.
pub const DEFEND_HYSTERESIS: usize = 10;

const DEFAULT_POLICY: &str = include_str!("../data/default_policy.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no backup policy named `{0}`")]
    UnknownPolicy(String),
    #[error("policy `{0}` is already in the bank")]
    DuplicatePolicy(String),
    #[error("invalid policy document: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub guard: Predicate,
    pub primitive: PrimitiveId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicy {
    pub policy_id: String,
    pub rules: Vec<Rule>,
    pub default: PrimitiveId,
}

impl MetaPolicy {
    /// Defend while the sustained infected-report rate exceeds 0.15, else
    /// formation control.
    pub fn default_policy() -> MetaPolicy {
        MetaPolicy::from_json(DEFAULT_POLICY).expect("shipped policy parses")
    }

    pub fn from_json(text: &str) -> Result<MetaPolicy, PolicyError> {
        let p: MetaPolicy = serde_json::from_str(text).map_err(|e| PolicyError::Invalid(e.to_string()))?;
        if p.policy_id.is_empty() {
            return Err(PolicyError::Invalid("empty policy_id".into()));
        }
        if !p.rules.iter().all(|r| r.guard.is_finite()) {
            return Err(PolicyError::Invalid("non-finite guard threshold".into()));
        }
        Ok(p)
    }

    /// True if no guard reads a score-type metric.
    pub fn is_normalized(&self) -> bool {
        self.rules
            .iter()
            .flat_map(|r| r.guard.metrics())
            .all(|m: Metric| !m.is_score_type())
    }

    pub fn select(&self, obs: &MetaObservation) -> PrimitiveId {
        select_primitive(self, obs)
    }
}

/// First rule whose guard holds, else the default.
pub fn select_primitive(policy: &MetaPolicy, obs: &MetaObservation) -> PrimitiveId {
    policy
        .rules
        .iter()
        .find(|r| r.guard.eval(obs))
        .map(|r| r.primitive)
        .unwrap_or(policy.default)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBank {
    pub active: MetaPolicy,
    pub backups: Vec<MetaPolicy>,
    pub capacity: usize,
    pub version: u64,
}

impl PolicyBank {
    pub fn new(active: MetaPolicy, capacity: usize) -> Self {
        Self {
            active,
            backups: Vec::new(),
            capacity,
            version: 0,
        }
    }

    /// Adds a backup, dropping the oldest one when over capacity.
    pub fn push_backup(&mut self, policy: MetaPolicy) -> Result<(), PolicyError> {
        if policy.policy_id == self.active.policy_id || self.backups.iter().any(|b| b.policy_id == policy.policy_id) {
            return Err(PolicyError::DuplicatePolicy(policy.policy_id));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        self.backups.push(policy);
        while self.backups.len() > self.capacity {
            self.backups.remove(0);
        }
        Ok(())
    }
}

/// Promotes the named backup; the previous active policy joins the backups.
pub fn switch_policy(bank: &PolicyBank, to: &str) -> Result<PolicyBank, PolicyError> {
    let idx = bank
        .backups
        .iter()
        .position(|b| b.policy_id == to)
        .ok_or_else(|| PolicyError::UnknownPolicy(to.to_string()))?;
    let mut next = bank.clone();
    let promoted = next.backups.remove(idx);
    let previous = std::mem::replace(&mut next.active, promoted);
    next.backups.push(previous);
    next.version += 1;
    Ok(next)
}
