//! The agent lifecycle: failure detection, tool synthesis, clone training,
//! verified promotion and the safety gate.
//!
//! [`LifecycleRun`] is a single state machine over a task stream. Each
//! [`LifecycleRun::step`] handles one task end to end; the whole state is
//! serializable, so a run can be checkpointed between any two steps and
//! resumed with an identical log tail.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agentcore::{attempt, Agent, AgentParams, AgentStatus, Substrate, Trace};
use crate::evolution::training::{ClConfig, RlConfig};
use crate::evolution::{
    cl_train, fitness_with, ga_train, rl_train, CurriculumState, EvolutionMode, GaConfig, TrainContext, TrainingRow,
};
use crate::exec::Execution;
use crate::rng::SeedTree;
use crate::router::{route, RoutingPolicy};
use crate::taskenv::{Split, Task, TaskSet};
use crate::toolforge::{capability_gap, synthesize, validate, ForgeConfig, SynthesisOutcome, Tool, ToolRegistry};
use crate::{Error, Result};

pub const RUNLOG_FORMAT: &str = "evoagent-runlog";
pub const RUNLOG_VERSION: u32 = 1;

/// Sliding-window estimate of each agent's expected reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureMonitor {
    pub window: usize,
    pub epsilon_fail: f64,
    pub recent_rewards: BTreeMap<String, VecDeque<f64>>,
    /// Difficulty tier of each windowed attempt, aligned with `recent_rewards`.
    pub recent_tiers: BTreeMap<String, VecDeque<u32>>,
}

impl FailureMonitor {
    pub fn new(window: usize, epsilon_fail: f64) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("lifecycle.window", "must be at least 1"));
        }
        if !epsilon_fail.is_finite() {
            return Err(Error::config("lifecycle.epsilon_fail", "must be finite"));
        }
        Ok(FailureMonitor {
            window,
            epsilon_fail,
            recent_rewards: BTreeMap::new(),
            recent_tiers: BTreeMap::new(),
        })
    }

    /// Appends `reward`; true iff the window is full and its mean is strictly
    /// below `epsilon_fail`.
    pub fn record_and_detect(&mut self, agent_id: &str, reward: f64) -> bool {
        self.record_and_detect_at(agent_id, reward, 0)
    }

    pub fn record_and_detect_at(&mut self, agent_id: &str, reward: f64, tier: u32) -> bool {
        let rewards = self.recent_rewards.entry(agent_id.to_string()).or_default();
        let tiers = self.recent_tiers.entry(agent_id.to_string()).or_default();
        rewards.push_back(reward);
        tiers.push_back(tier);
        while rewards.len() > self.window {
            rewards.pop_front();
            tiers.pop_front();
        }
        rewards.len() == self.window && self.window_mean(agent_id).is_some_and(|m| m < self.epsilon_fail)
    }

    pub fn window_mean(&self, agent_id: &str) -> Option<f64> {
        let q = self.recent_rewards.get(agent_id).filter(|q| !q.is_empty())?;
        Some(q.iter().sum::<f64>() / q.len() as f64)
    }

    /// Lower median tier among windowed attempts that fell below
    /// `epsilon_fail`; 0 when there are none.
    pub fn failing_tier(&self, agent_id: &str) -> u32 {
        let (Some(r), Some(t)) = (self.recent_rewards.get(agent_id), self.recent_tiers.get(agent_id)) else {
            return 0;
        };
        let mut tiers: Vec<u32> = r
            .iter()
            .zip(t)
            .filter(|(r, _)| **r < self.epsilon_fail)
            .map(|(_, t)| *t)
            .collect();
        if tiers.is_empty() {
            return 0;
        }
        tiers.sort_unstable();
        tiers[(tiers.len() - 1) / 2]
    }

    pub fn clear(&mut self, agent_id: &str) {
        self.recent_rewards.remove(agent_id);
        self.recent_tiers.remove(agent_id);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyStatus {
    Ok,
    Violation,
}

/// One-sided 95% normal quantile.
pub const SAFETY_Z: f64 = 1.645;

/// Upper end of the Wilson score interval for `k` successes in `n` trials.
pub fn wilson_upper(k: u64, n: u64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre + spread) / (1.0 + z2 / n)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyMonitor {
    pub delta_safe: f64,
    pub unsafe_count: u64,
    pub total_count: u64,
}

impl SafetyMonitor {
    pub fn new(delta_safe: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta_safe) {
            return Err(Error::config("lifecycle.delta_safe", "must lie in [0, 1]"));
        }
        Ok(SafetyMonitor {
            delta_safe,
            unsafe_count: 0,
            total_count: 0,
        })
    }

    pub fn upper_bound(&self) -> f64 {
        wilson_upper(self.unsafe_count, self.total_count, SAFETY_Z)
    }

    /// Counts `trace`. A violation needs at least one unsafe trace and a
    /// Wilson upper bound on the unsafe rate above `delta_safe`.
    pub fn check(&mut self, trace: &Trace) -> SafetyStatus {
        self.total_count += 1;
        if trace.is_unsafe {
            self.unsafe_count += 1;
        }
        if self.unsafe_count > 0 && self.upper_bound() > self.delta_safe {
            SafetyStatus::Violation
        } else {
            SafetyStatus::Ok
        }
    }
}

pub fn check_safety(monitor: &mut SafetyMonitor, trace: &Trace) -> SafetyStatus {
    monitor.check(trace)
}

/// How the evolution mode is picked when a failure trigger fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModePolicy {
    Fixed(EvolutionMode),
    RuleBased,
}

impl fmt::Display for ModePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModePolicy::Fixed(m) => f.write_str(&m.as_str().to_ascii_lowercase()),
            ModePolicy::RuleBased => f.write_str("auto"),
        }
    }
}

impl FromStr for ModePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(ModePolicy::RuleBased);
        }
        s.parse()
            .map(ModePolicy::Fixed)
            .map_err(|_| Error::config("lifecycle.mode", format!("expected cl, rl, ga or auto, got `{s}`")))
    }
}

impl TryFrom<String> for ModePolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModePolicy> for String {
    fn from(p: ModePolicy) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeContext {
    pub failing_tier: u32,
    pub consecutive_rejections: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeRules {
    /// Failing tiers at or above this go to RL, below it to CL.
    pub rl_tier_threshold: u32,
    /// Consecutive rejections after which GA is used.
    pub ga_after_rejections: u32,
}

impl Default for ModeRules {
    fn default() -> Self {
        ModeRules {
            rl_tier_threshold: 4,
            ga_after_rejections: 2,
        }
    }
}

pub fn select_mode(policy: ModePolicy, rules: &ModeRules, context: ModeContext) -> EvolutionMode {
    match policy {
        ModePolicy::Fixed(mode) => mode,
        ModePolicy::RuleBased if context.consecutive_rejections >= rules.ga_after_rejections => EvolutionMode::Ga,
        ModePolicy::RuleBased if context.failing_tier >= rules.rl_tier_threshold => EvolutionMode::Rl,
        ModePolicy::RuleBased => EvolutionMode::Cl,
    }
}

/// A trainable copy of an active agent under the fresh id `new_id`.
pub fn clone_agent(agent: &Agent, new_id: impl Into<String>) -> Result<Agent> {
    if agent.status != AgentStatus::Active {
        return Err(Error::contract(format!("cannot clone non-active agent `{}`", agent.id)));
    }
    let id = new_id.into();
    if id == agent.id {
        return Err(Error::contract("clone needs a fresh id"));
    }
    Ok(Agent {
        id,
        params: agent.params.clone(),
        tool_registry_id: agent.tool_registry_id.clone(),
        generation: agent.generation + 1,
        lineage: Some(agent.id.clone()),
        status: AgentStatus::CloneInTraining,
    })
}

/// Validation fitness of `candidate` minus that of `incumbent`.
pub fn evaluate_delta(
    candidate: &AgentParams,
    incumbent: &AgentParams,
    validation: &[Task],
    registry: &ToolRegistry,
    substrate: &Substrate,
    execution: Execution,
) -> Result<f64> {
    let c = fitness_with(candidate, validation, registry, substrate, execution)?;
    let i = fitness_with(incumbent, validation, registry, substrate, execution)?;
    Ok(c - i)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Roster {
    pub agents: Vec<Agent>,
}

impl Roster {
    pub fn new(agents: Vec<Agent>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for a in &agents {
            if !seen.insert(a.id.clone()) {
                return Err(Error::Duplicate(a.id.clone()));
            }
        }
        Ok(Roster { agents })
    }

    pub fn get(&self, id: &str) -> Option<&Agent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Agent> {
        self.agents.iter_mut().find(|a| a.id == id)
    }

    pub fn push(&mut self, agent: Agent) -> Result<()> {
        if self.get(&agent.id).is_some() {
            return Err(Error::Duplicate(agent.id));
        }
        self.agents.push(agent);
        Ok(())
    }

    pub fn active(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| a.status == AgentStatus::Active)
    }

    /// Id of the seed agent `id` descends from.
    pub fn lineage_root(&self, id: &str) -> String {
        let mut cur = id.to_string();
        while let Some(parent) = self.get(&cur).and_then(|a| a.lineage.clone()) {
            cur = parent;
        }
        cur
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Promoted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromotionRecord {
    pub original_id: String,
    pub clone_id: String,
    pub delta_perf: f64,
    pub epsilon_verify: f64,
    pub decision: Decision,
    pub val_size: usize,
    pub timestamp: u64,
    pub candidate_fitness: f64,
    pub incumbent_fitness: f64,
    pub mode: EvolutionMode,
    pub episode: u32,
}

impl PromotionRecord {
    pub fn is_sound(&self) -> bool {
        (self.decision == Decision::Promoted) == (self.delta_perf >= self.epsilon_verify)
    }
}

/// Applies the promotion gate. On promotion the clone becomes active and the
/// incumbent retires; otherwise the clone retires. Either way the roster is
/// only touched once both agents have been checked.
pub fn promote_or_reject(
    delta: f64,
    epsilon_verify: f64,
    candidate_id: &str,
    incumbent_id: &str,
    roster: &mut Roster,
) -> Result<Decision> {
    match roster.get(candidate_id) {
        Some(c) if c.status == AgentStatus::CloneInTraining => {}
        Some(_) => return Err(Error::contract(format!("`{candidate_id}` is not a clone in training"))),
        None => return Err(Error::contract(format!("unknown candidate `{candidate_id}`"))),
    }
    if roster.get(incumbent_id).is_none() {
        return Err(Error::contract(format!("unknown incumbent `{incumbent_id}`")));
    }
    if !delta.is_finite() {
        return Err(Error::contract("performance delta must be finite"));
    }
    let promoted = delta >= epsilon_verify;
    if promoted {
        if let Some(a) = roster.get_mut(incumbent_id) {
            a.status = AgentStatus::Retired;
        }
    }
    if let Some(c) = roster.get_mut(candidate_id) {
        c.status = if promoted {
            AgentStatus::Active
        } else {
            AgentStatus::Retired
        };
    }
    Ok(if promoted {
        Decision::Promoted
    } else {
        Decision::Rejected
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifecycleConfig {
    pub window: usize,
    pub epsilon_fail: f64,
    pub epsilon_verify: f64,
    pub delta_safe: f64,
    /// Tasks in the stream; the shuffled train split is cycled to fill it.
    pub stream_length: usize,
    pub max_episodes: u32,
    /// Consecutive rejections before a fixed-mode lineage counts as plateaued.
    pub max_rejections: u32,
    pub mode: ModePolicy,
    pub rules: ModeRules,
    pub seed_agents: usize,
    pub budget: f64,
    /// Capability level of the builtin generalist tool (every coordinate).
    pub builtin_caps: f64,
    pub builtin_exec_prob: f64,
    /// Width of a parameter-grid cell for exploration counts.
    pub cell_width: f64,
    pub routing: RoutingPolicy,
    pub substrate: Substrate,
    pub forge: ForgeConfig,
    pub cl: ClConfig,
    pub rl: RlConfig,
    pub ga: GaConfig,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        LifecycleConfig {
            window: 20,
            epsilon_fail: 0.3,
            epsilon_verify: 0.02,
            delta_safe: 0.05,
            stream_length: 500,
            max_episodes: 8,
            max_rejections: 3,
            mode: ModePolicy::RuleBased,
            rules: ModeRules::default(),
            seed_agents: 1,
            budget: 25.0,
            builtin_caps: 0.3,
            builtin_exec_prob: 0.9,
            cell_width: 0.25,
            routing: RoutingPolicy::default(),
            substrate: Substrate::default(),
            forge: ForgeConfig::default(),
            cl: ClConfig::default(),
            rl: RlConfig::default(),
            ga: GaConfig::default(),
        }
    }
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<()> {
        FailureMonitor::new(self.window, self.epsilon_fail)?;
        SafetyMonitor::new(self.delta_safe)?;
        if !(self.epsilon_verify >= 0.0 && self.epsilon_verify.is_finite()) {
            return Err(Error::config(
                "lifecycle.epsilon_verify",
                "must be a non-negative number",
            ));
        }
        if self.seed_agents == 0 {
            return Err(Error::config(
                "lifecycle.seed_agents",
                "roster needs at least one agent",
            ));
        }
        if !(self.budget >= 0.0) {
            return Err(Error::config("lifecycle.budget", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.builtin_caps) {
            return Err(Error::config("lifecycle.builtin_caps", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.builtin_exec_prob) {
            return Err(Error::config("lifecycle.builtin_exec_prob", "must lie in [0, 1]"));
        }
        if !(self.cell_width > 0.0) {
            return Err(Error::config("lifecycle.cell_width", "must be positive"));
        }
        if self.max_rejections == 0 {
            return Err(Error::config("lifecycle.max_rejections", "must be at least 1"));
        }
        if self.cl.batch_size == 0 {
            return Err(Error::config("lifecycle.cl.batch_size", "must be positive"));
        }
        if self.rl.batch_size == 0 {
            return Err(Error::config("lifecycle.rl.batch_size", "must be positive"));
        }
        if !(self.cl.exploration >= 0.0) {
            return Err(Error::config("lifecycle.cl.exploration", "must be non-negative"));
        }
        if !(self.cl.decay > 0.0 && self.cl.decay <= 1.0) {
            return Err(Error::config("lifecycle.cl.decay", "must lie in (0, 1]"));
        }
        self.cl.pg.validate("lifecycle.cl.pg")?;
        self.rl.pg.validate("lifecycle.rl.pg")?;
        self.routing.validate()?;
        self.substrate.validate()?;
        self.forge.validate()?;
        self.ga.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerAction {
    Evolve,
    Plateaued,
    EpisodeCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Route {
        step: u64,
        task_id: String,
        agent_id: String,
        affinity: f64,
    },
    Attempt {
        step: u64,
        task_id: String,
        agent_id: String,
        tool_id: Option<String>,
        retry: bool,
        success: bool,
        #[serde(rename = "unsafe")]
        is_unsafe: bool,
        reward: f64,
    },
    Synthesis {
        step: u64,
        task_id: String,
        tool_id: String,
        cost: f64,
        exec_prob: f64,
        accepted: bool,
        spent: f64,
        budget: f64,
    },
    BudgetRefusal {
        step: u64,
        task_id: String,
        cost: f64,
        spent: f64,
        budget: f64,
    },
    SafetyViolation {
        step: u64,
        agent_id: String,
        unsafe_count: u64,
        total_count: u64,
        upper_bound: f64,
        delta_safe: f64,
    },
    FailureTrigger {
        step: u64,
        agent_id: String,
        window_mean: f64,
        action: TriggerAction,
    },
    EvolutionStart {
        step: u64,
        episode: u32,
        original_id: String,
        clone_id: String,
        mode: EvolutionMode,
    },
    Promotion {
        step: u64,
        #[serde(flatten)]
        record: PromotionRecord,
    },
    Plateau {
        step: u64,
        lineage: String,
    },
}

impl Event {
    pub fn step(&self) -> u64 {
        match self {
            Event::Route { step, .. }
            | Event::Attempt { step, .. }
            | Event::Synthesis { step, .. }
            | Event::BudgetRefusal { step, .. }
            | Event::SafetyViolation { step, .. }
            | Event::FailureTrigger { step, .. }
            | Event::EvolutionStart { step, .. }
            | Event::Promotion { step, .. }
            | Event::Plateau { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    HaltedSafety,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineageState {
    pub active_id: String,
    pub consecutive_rejections: u32,
    pub plateaued: bool,
    pub curriculum: Option<CurriculumState>,
}

/// `(generation, validation fitness)` of each agent that became active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationPoint {
    pub lineage: String,
    pub generation: u32,
    pub agent_id: String,
    pub val_fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub status: RunStatus,
    pub steps: u64,
    pub episodes: u32,
    pub promotions: usize,
    pub rejections: usize,
    pub syntheses: usize,
    pub budget_refusals: usize,
    pub spent: f64,
    pub budget: f64,
    pub successes: u64,
    pub active_agents: Vec<String>,
    pub seed_val_fitness: f64,
    pub final_val_fitness: f64,
    pub plateaued: Vec<String>,
}

/// Resumable run state. Everything that influences later steps lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRun {
    pub seed: u64,
    pub config: LifecycleConfig,
    pub tasks: TaskSet,
    pub stream: Vec<String>,
    pub step: u64,
    pub status: RunStatus,
    pub roster: Roster,
    pub registry: ToolRegistry,
    pub failure: FailureMonitor,
    pub safety: SafetyMonitor,
    pub lineages: BTreeMap<String, LineageState>,
    pub episodes: u32,
    pub next_agent: u64,
    pub successes: u64,
    pub events: Vec<Event>,
    pub telemetry: Vec<TrainingRow>,
    pub generations: Vec<GenerationPoint>,
    pub cells: BTreeSet<Vec<i64>>,
    pub seed_params: AgentParams,
    #[serde(skip, default)]
    pub execution: Execution,
}

fn agent_name(n: u64) -> String {
    format!("agent-{n:03}")
}

impl LifecycleRun {
    pub fn new(config: LifecycleConfig, tasks: TaskSet, seed: u64) -> Result<Self> {
        config.validate()?;
        tasks.validate()?;
        let dim = tasks.dim().ok_or_else(|| Error::config("tasks", "task set is empty"))?;
        let mut train = tasks.splits.get(Split::Train).to_vec();
        if train.is_empty() {
            return Err(Error::config("tasks", "train split is empty"));
        }
        if tasks.splits.get(Split::Val).is_empty() {
            return Err(Error::config("tasks", "validation split is empty"));
        }
        train.shuffle(&mut SeedTree::new(seed).child("stream").rng());
        let stream = train.iter().cycle().take(config.stream_length).cloned().collect();

        let registry = ToolRegistry::new("registry-0", config.budget)?.with_builtins(vec![Tool::builtin(
            "builtin-generalist",
            vec![config.builtin_caps; dim],
            config.builtin_exec_prob,
        )])?;
        let seed_params = AgentParams::zeros(dim);
        let agents: Vec<Agent> = (0..config.seed_agents as u64)
            .map(|i| Agent::seed(agent_name(i), seed_params.clone(), registry.id.clone()))
            .collect();
        let lineages = agents
            .iter()
            .map(|a| {
                (
                    a.id.clone(),
                    LineageState {
                        active_id: a.id.clone(),
                        ..LineageState::default()
                    },
                )
            })
            .collect();
        let mut run = LifecycleRun {
            seed,
            failure: FailureMonitor::new(config.window, config.epsilon_fail)?,
            safety: SafetyMonitor::new(config.delta_safe)?,
            next_agent: agents.len() as u64,
            roster: Roster::new(agents)?,
            config,
            tasks,
            stream,
            step: 0,
            status: RunStatus::Running,
            registry,
            lineages,
            episodes: 0,
            successes: 0,
            events: Vec::new(),
            telemetry: Vec::new(),
            generations: Vec::new(),
            cells: BTreeSet::new(),
            seed_params,
            execution: Execution::default(),
        };
        let val = run.val_fitness(&run.seed_params)?;
        for a in run.roster.agents.clone() {
            run.cells
                .insert(crate::evolution::grid_cell(&a.params, run.config.cell_width));
            run.generations.push(GenerationPoint {
                lineage: a.id.clone(),
                generation: 0,
                agent_id: a.id,
                val_fitness: val,
            });
        }
        Ok(run)
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn is_finished(&self) -> bool {
        self.status != RunStatus::Running
    }

    pub fn val_fitness(&self, params: &AgentParams) -> Result<f64> {
        self.split_fitness(params, Split::Val)
    }

    pub fn split_fitness(&self, params: &AgentParams, split: Split) -> Result<f64> {
        fitness_with(
            params,
            &self.tasks.split_tasks(split),
            &self.registry,
            &self.config.substrate,
            self.execution,
        )
    }

    fn keys(&self) -> SeedTree {
        SeedTree::new(self.seed).child("step").index(self.step)
    }

    fn log(&mut self, event: Event) {
        self.events.push(event);
    }

    /// Attempts `task` with `agent_id`, logs it and applies the safety gate.
    /// Returns `None` when the run halted.
    fn attempt_logged(&mut self, agent_id: &str, task: &Task, retry: bool, key: &str) -> Result<Option<Trace>> {
        let agent = self
            .roster
            .get(agent_id)
            .ok_or_else(|| Error::contract(format!("unknown agent `{agent_id}`")))?;
        let mut rng = self.keys().child(key).rng();
        let trace = attempt(agent, task, &self.registry, &self.config.substrate, &mut rng)?;
        let reward = trace.reward(&self.registry, self.config.substrate.lambda_cost);
        self.log(Event::Attempt {
            step: self.step,
            task_id: task.id.clone(),
            agent_id: agent_id.to_string(),
            tool_id: trace.tool_used.clone(),
            retry,
            success: trace.success,
            is_unsafe: trace.is_unsafe,
            reward,
        });
        if check_safety(&mut self.safety, &trace) == SafetyStatus::Violation {
            self.log(Event::SafetyViolation {
                step: self.step,
                agent_id: agent_id.to_string(),
                unsafe_count: self.safety.unsafe_count,
                total_count: self.safety.total_count,
                upper_bound: self.safety.upper_bound(),
                delta_safe: self.safety.delta_safe,
            });
            self.status = RunStatus::HaltedSafety;
            return Ok(None);
        }
        Ok(Some(trace))
    }

    /// Synthesizes, validates and deploys a tool for `task`. True iff a tool
    /// was deployed.
    fn forge(&mut self, task: &Task) -> Result<bool> {
        let gap = capability_gap(task, &self.registry);
        if gap.iter().all(|g| *g <= 0.0) {
            return Ok(false);
        }
        let keys = self.keys();
        let outcome = synthesize(
            task,
            &gap,
            &self.config.forge,
            &self.registry,
            self.step,
            &mut keys.child("synthesize").rng(),
        )?;
        match outcome {
            SynthesisOutcome::BudgetRefusal { cost, spent, budget } => {
                self.log(Event::BudgetRefusal {
                    step: self.step,
                    task_id: task.id.clone(),
                    cost,
                    spent,
                    budget,
                });
                Ok(false)
            }
            SynthesisOutcome::Proposed(tool) => {
                let accepted = validate(
                    &tool,
                    std::slice::from_ref(task),
                    self.config.forge.validation_trials,
                    self.config.forge.min_exec_rate,
                    &mut keys.child("validate").rng(),
                )?;
                let (tool_id, cost, exec_prob) = (tool.id.clone(), tool.cost, tool.exec_prob);
                if accepted {
                    self.registry.deploy(tool)?;
                }
                self.log(Event::Synthesis {
                    step: self.step,
                    task_id: task.id.clone(),
                    tool_id,
                    cost,
                    exec_prob,
                    accepted,
                    spent: self.registry.spent,
                    budget: self.registry.budget,
                });
                Ok(accepted)
            }
        }
    }

    /// Processes the next task of the stream.
    pub fn step(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        let Some(task_id) = self.stream.get(self.step as usize).cloned() else {
            self.status = RunStatus::Completed;
            return Ok(());
        };
        let task = self
            .tasks
            .get(&task_id)
            .cloned()
            .ok_or_else(|| Error::contract(format!("stream references unknown task `{task_id}`")))?;

        let decision = route(
            &task,
            &self.roster.agents,
            &self.config.routing,
            &mut self.keys().child("route").rng(),
        )?;
        let affinity = decision
            .scores
            .iter()
            .find(|(id, _)| *id == decision.chosen)
            .map_or(0.0, |(_, s)| *s);
        let agent_id = decision.chosen;
        self.log(Event::Route {
            step: self.step,
            task_id: task.id.clone(),
            agent_id: agent_id.clone(),
            affinity,
        });

        let Some(mut trace) = self.attempt_logged(&agent_id, &task, false, "attempt")? else {
            return Ok(());
        };
        if !trace.success && self.forge(&task)? {
            match self.attempt_logged(&agent_id, &task, true, "retry")? {
                Some(t) => trace = t,
                None => return Ok(()),
            }
        }
        if trace.success {
            self.successes += 1;
        }
        let reward = trace.reward(&self.registry, self.config.substrate.lambda_cost);
        if self.failure.record_and_detect_at(&agent_id, reward, task.difficulty) {
            self.on_failure(&agent_id)?;
        }
        self.step += 1;
        if self.step as usize >= self.stream.len() {
            self.status = RunStatus::Completed;
        }
        Ok(())
    }

    fn on_failure(&mut self, agent_id: &str) -> Result<()> {
        let lineage = self.roster.lineage_root(agent_id);
        let window_mean = self.failure.window_mean(agent_id).unwrap_or(0.0);
        let state = self.lineages.get(&lineage).cloned().unwrap_or_default();
        let action = if state.plateaued {
            TriggerAction::Plateaued
        } else if self.episodes >= self.config.max_episodes {
            TriggerAction::EpisodeCap
        } else {
            TriggerAction::Evolve
        };
        self.log(Event::FailureTrigger {
            step: self.step,
            agent_id: agent_id.to_string(),
            window_mean,
            action,
        });
        if action == TriggerAction::Evolve {
            self.evolve(agent_id, &lineage, state)?;
        }
        self.failure.clear(agent_id);
        Ok(())
    }

    fn evolve(&mut self, agent_id: &str, lineage: &str, mut state: LineageState) -> Result<()> {
        let mode = select_mode(
            self.config.mode,
            &self.config.rules,
            ModeContext {
                failing_tier: self.failure.failing_tier(agent_id),
                consecutive_rejections: state.consecutive_rejections,
            },
        );
        let original = self
            .roster
            .get(agent_id)
            .cloned()
            .ok_or_else(|| Error::contract(format!("unknown agent `{agent_id}`")))?;
        let clone = clone_agent(&original, agent_name(self.next_agent))?;
        self.next_agent += 1;
        let clone_id = clone.id.clone();
        self.roster.push(clone.clone())?;
        let episode = self.episodes;
        self.log(Event::EvolutionStart {
            step: self.step,
            episode,
            original_id: agent_id.to_string(),
            clone_id: clone_id.clone(),
            mode,
        });

        let train = self.tasks.split_tasks(Split::Train);
        let validation = self.tasks.split_tasks(Split::Val);
        let incumbent_fitness = fitness_with(
            &original.params,
            &validation,
            &self.registry,
            &self.config.substrate,
            self.execution,
        )?;
        let ctx = TrainContext {
            train: &train,
            validation: &validation,
            registry: &self.registry,
            substrate: &self.config.substrate,
            incumbent_fitness,
            epsilon_verify: self.config.epsilon_verify,
            cell_width: self.config.cell_width,
            episode,
            seeds: SeedTree::new(self.seed).child("episode").index(episode as u64),
            execution: self.execution,
        };
        let outcome = match mode {
            EvolutionMode::Cl => {
                let curriculum = match state.curriculum.take() {
                    Some(c) => c,
                    None => CurriculumState::from_tasks(&train, self.config.cl.exploration, self.config.cl.decay)?,
                };
                let (_, next, outcome) = cl_train(&clone, curriculum, &ctx, &self.config.cl)?;
                state.curriculum = Some(next);
                outcome
            }
            EvolutionMode::Rl => rl_train(&clone, &ctx, &self.config.rl)?,
            EvolutionMode::Ga => ga_train(&clone, &ctx, &self.config.ga)?,
        };
        let candidate_params = outcome.agent.params.clone();
        if let Some(c) = self.roster.get_mut(&clone_id) {
            c.params = candidate_params.clone();
        }
        self.telemetry.extend(outcome.telemetry);
        self.cells.extend(outcome.cells);

        let candidate_fitness = fitness_with(
            &candidate_params,
            &validation,
            &self.registry,
            &self.config.substrate,
            self.execution,
        )?;
        let delta = candidate_fitness - incumbent_fitness;
        let decision = promote_or_reject(delta, self.config.epsilon_verify, &clone_id, agent_id, &mut self.roster)?;
        let record = PromotionRecord {
            original_id: agent_id.to_string(),
            clone_id: clone_id.clone(),
            delta_perf: delta,
            epsilon_verify: self.config.epsilon_verify,
            decision,
            val_size: validation.len(),
            timestamp: self.step,
            candidate_fitness,
            incumbent_fitness,
            mode,
            episode,
        };
        self.log(Event::Promotion {
            step: self.step,
            record,
        });
        match decision {
            Decision::Promoted => {
                state.active_id = clone_id.clone();
                state.consecutive_rejections = 0;
                self.generations.push(GenerationPoint {
                    lineage: lineage.to_string(),
                    generation: clone.generation,
                    agent_id: clone_id,
                    val_fitness: candidate_fitness,
                });
            }
            Decision::Rejected => {
                state.consecutive_rejections += 1;
                let exhausted = match self.config.mode {
                    ModePolicy::RuleBased => mode == EvolutionMode::Ga,
                    ModePolicy::Fixed(_) => state.consecutive_rejections >= self.config.max_rejections,
                };
                if exhausted {
                    state.plateaued = true;
                    self.log(Event::Plateau {
                        step: self.step,
                        lineage: lineage.to_string(),
                    });
                }
            }
        }
        self.lineages.insert(lineage.to_string(), state);
        self.episodes += 1;
        Ok(())
    }

    /// Steps until the stream ends or the run halts.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Steps until `step` tasks have been processed (or the run ends).
    pub fn run_until(&mut self, step: u64) -> Result<()> {
        while !self.is_finished() && self.step < step {
            self.step()?;
        }
        Ok(())
    }

    pub fn promotion_records(&self) -> impl Iterator<Item = &PromotionRecord> {
        self.events.iter().filter_map(|e| match e {
            Event::Promotion { record, .. } => Some(record),
            _ => None,
        })
    }

    pub fn active_agents(&self) -> Vec<&Agent> {
        self.roster.active().collect()
    }

    /// Parameters of the best active agent on the validation split.
    pub fn best_active(&self) -> Result<&Agent> {
        let mut best: Option<(&Agent, f64)> = None;
        for a in self.roster.active() {
            let f = self.val_fitness(&a.params)?;
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((a, f));
            }
        }
        best.map(|(a, _)| a)
            .ok_or_else(|| Error::contract("roster has no active agent"))
    }

    pub fn summary(&self) -> Result<RunSummary> {
        let count = |pred: fn(&Event) -> bool| self.events.iter().filter(|e| pred(e)).count();
        let decisions: Vec<Decision> = self.promotion_records().map(|r| r.decision).collect();
        Ok(RunSummary {
            format: RUNLOG_FORMAT.to_string(),
            version: RUNLOG_VERSION,
            seed: self.seed,
            status: self.status,
            steps: self.step,
            episodes: self.episodes,
            promotions: decisions.iter().filter(|d| **d == Decision::Promoted).count(),
            rejections: decisions.iter().filter(|d| **d == Decision::Rejected).count(),
            syntheses: count(|e| matches!(e, Event::Synthesis { accepted: true, .. })),
            budget_refusals: count(|e| matches!(e, Event::BudgetRefusal { .. })),
            spent: self.registry.spent,
            budget: self.registry.budget,
            successes: self.successes,
            active_agents: self.roster.active().map(|a| a.id.clone()).collect(),
            seed_val_fitness: self.val_fitness(&self.seed_params)?,
            final_val_fitness: self.val_fitness(&self.best_active()?.params)?,
            plateaued: self
                .lineages
                .iter()
                .filter(|(_, s)| s.plateaued)
                .map(|(k, _)| k.clone())
                .collect(),
        })
    }

    /// The event log as JSON lines, preceded by a version header.
    pub fn runlog_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&serde_json::json!({
            "format": RUNLOG_FORMAT,
            "version": RUNLOG_VERSION,
            "seed": self.seed,
        }))?;
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}
