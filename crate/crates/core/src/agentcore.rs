//! Agents, attempts and the reward calculus.
//!
//! An agent's competence on a task is `sigmoid(w . x + b - beta * tier)`,
//! scaled by how much of the task's capability demand its best tool covers.
//! Reasoning correctness is a Bernoulli draw at that probability; the tool
//! then executes with its own `exec_prob`.
//!
//! The tool-conditioned reward of a trace is
//! `r_task * P_exec(tool) - lambda_cost * C_cost(tool)`, so its expectation has
//! the closed form `p_success * P_exec - lambda_cost * C_cost` used as fitness.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::rng::SeedTree;
use crate::taskenv::{StepRecord, Task};
use crate::toolforge::{coverage, Tool, ToolRegistry};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AgentParams {
    pub fn zeros(dim: usize) -> Self {
        AgentParams {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Weights followed by the bias.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn from_vec(mut v: Vec<f64>) -> Self {
        let bias = v.pop().unwrap_or(0.0);
        AgentParams { weights: v, bias }
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    pub fn distance(&self, other: &AgentParams) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    CloneInTraining,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: String,
    pub params: AgentParams,
    pub tool_registry_id: String,
    pub generation: u32,
    pub lineage: Option<String>,
    pub status: AgentStatus,
}

impl Agent {
    pub fn seed(id: impl Into<String>, params: AgentParams, registry_id: impl Into<String>) -> Self {
        Agent {
            id: id.into(),
            params,
            tool_registry_id: registry_id.into(),
            generation: 0,
            lineage: None,
            status: AgentStatus::Active,
        }
    }

    pub fn can_attempt(&self) -> bool {
        matches!(self.status, AgentStatus::Active | AgentStatus::CloneInTraining)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r_task` is 1 on correct reasoning, else 0.
    Binary,
    /// Failed attempts earn the fraction of gold steps completed before the
    /// failure, uniform over `0..depth`.
    PartialCredit,
}

/// Run-level knobs of the simulated competence substrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Substrate {
    /// Logit penalty per difficulty tier.
    pub difficulty_penalty: f64,
    /// Weight of the tool cost in the trace reward.
    pub lambda_cost: f64,
    /// Unsafe probability for attempts whose tool leaves demand uncovered.
    pub hazard_rate: f64,
    /// Unsafe probability injected into every attempt.
    pub injected_unsafe_rate: f64,
    pub reward_mode: RewardMode,
}

impl Default for Substrate {
    fn default() -> Self {
        Substrate {
            difficulty_penalty: 0.5,
            lambda_cost: 0.01,
            hazard_rate: 0.0,
            injected_unsafe_rate: 0.0,
            reward_mode: RewardMode::Binary,
        }
    }
}

impl Substrate {
    pub fn validate(&self) -> Result<()> {
        if !self.difficulty_penalty.is_finite() {
            return Err(Error::config("substrate.difficulty_penalty", "must be finite"));
        }
        if !(self.lambda_cost >= 0.0) {
            return Err(Error::config("substrate.lambda_cost", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.hazard_rate) {
            return Err(Error::config("substrate.hazard_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.injected_unsafe_rate) {
            return Err(Error::config("substrate.injected_unsafe_rate", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Probability that an attempt at the given coverage is flagged unsafe.
    pub fn unsafe_prob(&self, coverage: f64) -> f64 {
        let hazard = if coverage < 1.0 { self.hazard_rate } else { 0.0 };
        1.0 - (1.0 - hazard) * (1.0 - self.injected_unsafe_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub task_id: String,
    pub agent_id: String,
    pub steps: Vec<StepRecord>,
    pub tool_used: Option<String>,
    pub coverage: f64,
    pub difficulty: u32,
    /// Outcome of the reasoning draw, the only part of a trace whose
    /// probability depends on the agent's parameters.
    pub reasoning_ok: bool,
    pub success: bool,
    pub raw_task_reward: f64,
    pub exec_ok: bool,
    pub cost_incurred: f64,
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
}

impl Trace {
    pub fn tool_calls(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.kind == crate::taskenv::StepKind::ToolCall)
            .count()
    }

    /// Tool-conditioned reward using the registry entry of the tool used.
    pub fn reward(&self, registry: &ToolRegistry, lambda_cost: f64) -> f64 {
        let tool = self.tool_used.as_deref().and_then(|id| registry.get(id));
        trace_reward(self, tool, lambda_cost)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dims(params: &AgentParams, task: &Task) -> Result<()> {
    if params.dim() != task.dim() {
        return Err(Error::contract(format!(
            "agent dimension {} does not match task `{}` dimension {}",
            params.dim(),
            task.id,
            task.dim()
        )));
    }
    Ok(())
}

/// Pre-sigmoid competence score `w . x + b`.
pub fn affinity(params: &AgentParams, task: &Task) -> Result<f64> {
    check_dims(params, task)?;
    Ok(params
        .weights
        .iter()
        .zip(&task.features)
        .map(|(w, x)| w * x)
        .sum::<f64>()
        + params.bias)
}

/// Logit of the reasoning draw before coverage scaling.
pub fn competence_logit(params: &AgentParams, task: &Task, substrate: &Substrate) -> Result<f64> {
    Ok(affinity(params, task)? - substrate.difficulty_penalty * task.difficulty as f64)
}

pub fn success_prob(params: &AgentParams, task: &Task, tool: Option<&Tool>, substrate: &Substrate) -> Result<f64> {
    if let Some(tool) = tool {
        if tool.caps.len() != task.dim() {
            return Err(Error::contract(format!(
                "tool `{}` dimension {} does not match task `{}`",
                tool.id,
                tool.caps.len(),
                task.id
            )));
        }
    }
    Ok(sigmoid(competence_logit(params, task, substrate)?) * coverage(tool, task))
}

/// Mean reward of a failed attempt under the configured reward mode.
fn failure_credit(task: &Task, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::Binary => 0.0,
        RewardMode::PartialCredit => {
            let depth = task.composition_depth.max(1) as f64;
            (depth - 1.0) / (2.0 * depth)
        }
    }
}

/// One attempt of `agent` on `task`.
///
/// Draw order on `rng`: reasoning correctness, tool execution, unsafe flag,
/// then (partial-credit mode, failed reasoning only) the number of completed
/// gold steps.
pub fn attempt<R: Rng>(
    agent: &Agent,
    task: &Task,
    registry: &ToolRegistry,
    substrate: &Substrate,
    rng: &mut R,
) -> Result<Trace> {
    if !agent.can_attempt() {
        return Err(Error::contract(format!("agent `{}` is retired", agent.id)));
    }
    let tool = registry.best_for(task);
    let cov = coverage(tool, task);
    let p = success_prob(&agent.params, task, tool, substrate)?;
    let exec_prob = tool.map_or(1.0, |t| t.exec_prob);

    let reasoning_ok = rng.random::<f64>() < p;
    let exec_ok = rng.random::<f64>() < exec_prob;
    let is_unsafe = rng.random::<f64>() < substrate.unsafe_prob(cov);
    let raw_task_reward = if reasoning_ok {
        1.0
    } else {
        match substrate.reward_mode {
            RewardMode::Binary => 0.0,
            RewardMode::PartialCredit => {
                let depth = task.composition_depth.max(1);
                rng.random_range(0..depth) as f64 / depth as f64
            }
        }
    };

    let mut steps: Vec<StepRecord> = (0..task.composition_depth.max(1))
        .map(|i| StepRecord::reasoning(format!("sub-step {i}")))
        .collect();
    if let Some(tool) = tool {
        steps.push(StepRecord::tool_call(tool.id.clone(), format!("{:.3}", cov)));
        steps.push(StepRecord::observation(if exec_ok { "ok" } else { "error" }));
    }

    let trace = Trace {
        task_id: task.id.clone(),
        agent_id: agent.id.clone(),
        steps,
        tool_used: tool.map(|t| t.id.clone()),
        coverage: cov,
        difficulty: task.difficulty,
        reasoning_ok,
        success: reasoning_ok && exec_ok && !is_unsafe,
        raw_task_reward,
        exec_ok,
        cost_incurred: tool.map_or(0.0, |t| t.cost),
        is_unsafe,
    };
    debug_assert!(!(trace.is_unsafe && trace.success));
    Ok(trace)
}

/// Probability that an attempt succeeds outright: correct, executed and safe.
pub fn success_rate(params: &AgentParams, task: &Task, registry: &ToolRegistry, substrate: &Substrate) -> Result<f64> {
    let tool = registry.best_for(task);
    let p = success_prob(params, task, tool, substrate)?;
    let exec_prob = tool.map_or(1.0, |t| t.exec_prob);
    Ok(p * exec_prob * (1.0 - substrate.unsafe_prob(coverage(tool, task))))
}

/// `r_task * P_exec - lambda * C_cost`; tool-free traces use `P_exec = 1`, `C_cost = 0`.
pub fn trace_reward(trace: &Trace, tool: Option<&Tool>, lambda_cost: f64) -> f64 {
    let (exec_prob, cost) = tool.map_or((1.0, 0.0), |t| (t.exec_prob, t.cost));
    trace.raw_task_reward * exec_prob - lambda_cost * cost
}

/// Exact expected trace reward: the outcome space is small enough to sum
/// over directly.
pub fn closed_form_reward(
    params: &AgentParams,
    task: &Task,
    registry: &ToolRegistry,
    substrate: &Substrate,
) -> Result<f64> {
    let tool = registry.best_for(task);
    let p = success_prob(params, task, tool, substrate)?;
    let (exec_prob, cost) = tool.map_or((1.0, 0.0), |t| (t.exec_prob, t.cost));
    let expected_raw = p + (1.0 - p) * failure_credit(task, substrate.reward_mode);
    Ok(expected_raw * exec_prob - substrate.lambda_cost * cost)
}

/// Expected reward of `agent` on `task`. `n_samples == 0` returns the closed
/// form; otherwise the Monte Carlo mean over `n_samples` attempts, attempt
/// `i` drawing from `seeds.index(i)`.
pub fn expected_reward(
    agent: &Agent,
    task: &Task,
    registry: &ToolRegistry,
    substrate: &Substrate,
    n_samples: usize,
    seeds: SeedTree,
    execution: Execution,
) -> Result<f64> {
    if n_samples == 0 {
        return closed_form_reward(&agent.params, task, registry, substrate);
    }
    let rewards = execution
        .map_range(n_samples, |i| {
            attempt(agent, task, registry, substrate, &mut seeds.index(i as u64).rng())
                .map(|t| t.reward(registry, substrate.lambda_cost))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(exec::mean(&rewards))
}
