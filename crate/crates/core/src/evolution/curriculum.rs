//! Difficulty buckets as bandit arms.
//!
//! The scheduler picks the bucket maximising expected performance gain per
//! unit of training cost, with a UCB-style exploration bonus:
//!
//! ```text
//! score(b) = (mean_gain(b) + c * sqrt(ln(N + 1) / (n_b + 1))) / cost(b)
//! ```
//!
//! Gains are tracked with an exponential moving average so the estimate
//! follows the clone as it improves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::taskenv::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub pulls: u64,
    pub mean_gain: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    /// Keyed by difficulty tier.
    pub arms: BTreeMap<u32, ArmStats>,
    pub exploration_coefficient: f64,
    /// EMA step size once an arm has `1 / decay` pulls; before that the
    /// running mean is exact.
    pub decay: f64,
    pub total_pulls: u64,
}

impl CurriculumState {
    pub fn new(costs: impl IntoIterator<Item = (u32, f64)>, exploration_coefficient: f64, decay: f64) -> Result<Self> {
        if !(exploration_coefficient >= 0.0) {
            return Err(Error::config("cl.exploration", "must be non-negative"));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::config("cl.decay", "must lie in (0, 1]"));
        }
        let mut arms = BTreeMap::new();
        for (tier, cost) in costs {
            if !(cost > 0.0) {
                return Err(Error::config("cl.cost", format!("bucket {tier} cost must be positive")));
            }
            arms.insert(
                tier,
                ArmStats {
                    pulls: 0,
                    mean_gain: 0.0,
                    cost,
                },
            );
        }
        Ok(CurriculumState {
            arms,
            exploration_coefficient,
            decay,
            total_pulls: 0,
        })
    }

    /// One arm per tier present in `tasks`, costed at the tier's mean
    /// composition depth.
    pub fn from_tasks(tasks: &[Task], exploration_coefficient: f64, decay: f64) -> Result<Self> {
        let mut depth: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        for t in tasks {
            let e = depth.entry(t.difficulty).or_insert((0.0, 0));
            e.0 += t.composition_depth.max(1) as f64;
            e.1 += 1;
        }
        Self::new(
            depth.into_iter().map(|(tier, (sum, n))| (tier, sum / n as f64)),
            exploration_coefficient,
            decay,
        )
    }

    pub fn score(&self, tier: u32) -> Option<f64> {
        let arm = self.arms.get(&tier)?;
        let bonus =
            self.exploration_coefficient * (((self.total_pulls + 1) as f64).ln() / (arm.pulls + 1) as f64).sqrt();
        Some((arm.mean_gain + bonus) / arm.cost)
    }
}

/// Next bucket to train on. Unpulled arms go first in tier order; otherwise
/// the highest score wins, ties to the lowest tier.
pub fn select_bucket(state: &CurriculumState) -> Result<u32> {
    select_bucket_masked(state, |_| true)
}

/// Like [`select_bucket`] but only over arms for which `allowed` holds
/// (used to mask buckets that ran out of tasks).
pub fn select_bucket_masked(state: &CurriculumState, allowed: impl Fn(u32) -> bool) -> Result<u32> {
    let eligible: Vec<u32> = state.arms.keys().copied().filter(|t| allowed(*t)).collect();
    if eligible.is_empty() {
        return Err(Error::config("cl.buckets", "curriculum has no selectable bucket"));
    }
    if let Some(fresh) = eligible.iter().find(|t| state.arms[t].pulls == 0) {
        return Ok(*fresh);
    }
    let mut best = eligible[0];
    let mut best_score = state.score(best).unwrap_or(f64::NEG_INFINITY);
    for tier in &eligible[1..] {
        let s = state.score(*tier).unwrap_or(f64::NEG_INFINITY);
        if s > best_score {
            best = *tier;
            best_score = s;
        }
    }
    Ok(best)
}

pub fn update_bucket_stats(state: &CurriculumState, tier: u32, observed_gain: f64) -> Result<CurriculumState> {
    if !observed_gain.is_finite() {
        return Err(Error::contract("observed gain must be finite"));
    }
    let mut next = state.clone();
    let decay = next.decay;
    let arm = next
        .arms
        .get_mut(&tier)
        .ok_or_else(|| Error::contract(format!("unknown curriculum bucket {tier}")))?;
    arm.pulls += 1;
    let step = decay.max(1.0 / arm.pulls as f64);
    arm.mean_gain += step * (observed_gain - arm.mean_gain);
    next.total_pulls += 1;
    Ok(next)
}
