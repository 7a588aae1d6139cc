//! REINFORCE with a mean-reward baseline and L2 regularisation.
//!
//! The only parameter-dependent event in a trace is the reasoning draw,
//! `P(ok) = sigmoid(z) * coverage` with `z = w . x + b - beta * tier`. For a
//! fixed on-policy batch the update descends the surrogate
//!
//! ```text
//! L(theta) = -(1/N) sum_i (R_i - mean R) log pi_theta(trace_i) + gamma/2 |theta|^2
//! ```
//!
//! whose gradient is the usual likelihood-ratio estimator of
//! `-grad E[R] + gamma * theta`.

use serde::{Deserialize, Serialize};

use crate::agentcore::{competence_logit, sigmoid, AgentParams, Substrate, Trace};
use crate::taskenv::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgConfig {
    pub eta: f64,
    pub gamma: f64,
}

impl Default for PgConfig {
    fn default() -> Self {
        PgConfig { eta: 0.05, gamma: 1e-3 }
    }
}

impl PgConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.eta >= 0.0) {
            return Err(Error::config(format!("{prefix}.eta"), "must be non-negative"));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::config(format!("{prefix}.gamma"), "must be non-negative"));
        }
        Ok(())
    }
}

const LOG_FLOOR: f64 = 1e-300;

/// `log pi_theta(trace)` restricted to the reasoning draw.
pub fn log_prob(params: &AgentParams, trace: &Trace, task: &Task, substrate: &Substrate) -> Result<f64> {
    let s = sigmoid(competence_logit(params, task, substrate)?);
    let p = s * trace.coverage;
    Ok(if trace.reasoning_ok {
        p.max(LOG_FLOOR).ln()
    } else {
        (1.0 - p).max(LOG_FLOOR).ln()
    })
}

/// Gradient of [`log_prob`] over `[weights..., bias]`.
pub fn log_prob_grad(params: &AgentParams, trace: &Trace, task: &Task, substrate: &Substrate) -> Result<Vec<f64>> {
    let s = sigmoid(competence_logit(params, task, substrate)?);
    let c = trace.coverage;
    let dz = if trace.reasoning_ok {
        1.0 - s
    } else if c * s >= 1.0 {
        0.0
    } else {
        -c * s * (1.0 - s) / (1.0 - c * s)
    };
    let mut g: Vec<f64> = task.features.iter().map(|x| dz * x).collect();
    g.push(dz);
    Ok(g)
}

fn advantages(rewards: &[f64]) -> Vec<f64> {
    let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
    rewards.iter().map(|r| r - baseline).collect()
}

fn check_batch(batch: &[(Trace, &Task)], rewards: &[f64]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract("policy gradient needs a non-empty batch"));
    }
    if batch.len() != rewards.len() {
        return Err(Error::contract("one reward per trace is required"));
    }
    Ok(())
}

pub fn surrogate_loss(
    params: &AgentParams,
    batch: &[(Trace, &Task)],
    rewards: &[f64],
    gamma: f64,
    substrate: &Substrate,
) -> Result<f64> {
    check_batch(batch, rewards)?;
    let adv = advantages(rewards);
    let mut loss = 0.0;
    for ((trace, task), a) in batch.iter().zip(&adv) {
        loss -= a * log_prob(params, trace, task, substrate)?;
    }
    loss /= batch.len() as f64;
    let norm2: f64 = params.to_vec().iter().map(|v| v * v).sum();
    Ok(loss + 0.5 * gamma * norm2)
}

pub fn surrogate_gradient(
    params: &AgentParams,
    batch: &[(Trace, &Task)],
    rewards: &[f64],
    gamma: f64,
    substrate: &Substrate,
) -> Result<Vec<f64>> {
    check_batch(batch, rewards)?;
    let adv = advantages(rewards);
    let theta = params.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for ((trace, task), a) in batch.iter().zip(&adv) {
        if *a == 0.0 {
            continue;
        }
        let g = log_prob_grad(params, trace, task, substrate)?;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc -= a * gi;
        }
    }
    let n = batch.len() as f64;
    Ok(grad.iter().zip(&theta).map(|(g, t)| g / n + gamma * t).collect())
}

/// One gradient step on a batch of on-policy traces. `reward_fn` supplies the
/// reward each trace is credited with (environment reward or a learned model).
pub fn policy_gradient_step(
    params: &AgentParams,
    batch: &[(Trace, &Task)],
    reward_fn: impl Fn(&Trace, &Task) -> f64,
    config: &PgConfig,
    substrate: &Substrate,
) -> Result<AgentParams> {
    config.validate("pg")?;
    let rewards: Vec<f64> = batch.iter().map(|(t, task)| reward_fn(t, task)).collect();
    let grad = surrogate_gradient(params, batch, &rewards, config.gamma, substrate)?;
    let next: Vec<f64> = params
        .to_vec()
        .iter()
        .zip(grad)
        .map(|(t, g)| t - config.eta * g)
        .collect();
    Ok(AgentParams::from_vec(next))
}
