//! Task routing over the active roster.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentcore::{Agent, AgentStatus};
use crate::taskenv::Task;
use crate::{Error, Result};

pub use crate::agentcore::affinity as params_affinity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    Argmax,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoutingPolicy {
    pub mode: RoutingMode,
    pub temperature: f64,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        RoutingPolicy {
            mode: RoutingMode::Argmax,
            temperature: 1.0,
        }
    }
}

impl RoutingPolicy {
    pub fn softmax(temperature: f64) -> Self {
        RoutingPolicy {
            mode: RoutingMode::Softmax,
            temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == RoutingMode::Softmax && !(self.temperature > 0.0) {
            return Err(Error::config(
                "routing.temperature",
                "must be positive for softmax routing",
            ));
        }
        Ok(())
    }
}

pub fn affinity(agent: &Agent, task: &Task) -> Result<f64> {
    params_affinity(&agent.params, task)
}

/// Selection probabilities `exp(s / T) / sum exp(s / T)`, shifted by the max
/// score for stability.
pub fn softmax_probabilities(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub task_id: String,
    /// `(agent id, affinity)` for every eligible agent, roster order.
    pub scores: Vec<(String, f64)>,
    pub chosen: String,
}

/// Picks the agent that handles `task`. Only active agents are eligible.
///
/// Argmax ties go to the lexicographically smallest id. Softmax consumes one
/// uniform draw from `rng`; argmax consumes none.
pub fn route<R: Rng>(task: &Task, agents: &[Agent], policy: &RoutingPolicy, rng: &mut R) -> Result<RouteDecision> {
    policy.validate()?;
    let eligible: Vec<&Agent> = agents.iter().filter(|a| a.status == AgentStatus::Active).collect();
    if eligible.is_empty() {
        return Err(Error::Routing(format!("no active agent for task `{}`", task.id)));
    }
    let scores = eligible
        .iter()
        .map(|a| affinity(a, task))
        .collect::<Result<Vec<f64>>>()?;
    let idx = match policy.mode {
        RoutingMode::Argmax => {
            let mut best = 0;
            for i in 1..eligible.len() {
                if scores[i] > scores[best] || (scores[i] == scores[best] && eligible[i].id < eligible[best].id) {
                    best = i;
                }
            }
            best
        }
        RoutingMode::Softmax => {
            let probs = softmax_probabilities(&scores, policy.temperature);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        }
    };
    Ok(RouteDecision {
        task_id: task.id.clone(),
        scores: eligible.iter().zip(&scores).map(|(a, s)| (a.id.clone(), *s)).collect(),
        chosen: eligible[idx].id.clone(),
    })
}
