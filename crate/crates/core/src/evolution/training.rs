//! Clone training loops for the three evolution modes.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::curriculum::{select_bucket_masked, update_bucket_stats, CurriculumState};
use super::fitness::fitness_with;
use super::genetic::{evolve_generation, GaConfig, Population};
use super::policy_gradient::{policy_gradient_step, PgConfig};
use super::reward_model::{fit_reward_model_from, score_trace, FitConfig, RewardModel};
use super::EvolutionMode;
use crate::agentcore::{attempt, Agent, AgentParams, AgentStatus, Substrate, Trace};
use crate::exec::Execution;
use crate::rng::SeedTree;
use crate::taskenv::Task;
use crate::toolforge::ToolRegistry;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClConfig {
    pub steps: u32,
    pub batch_size: usize,
    pub pg: PgConfig,
    pub exploration: f64,
    pub decay: f64,
}

impl Default for ClConfig {
    fn default() -> Self {
        ClConfig {
            steps: 200,
            batch_size: 32,
            pg: PgConfig::default(),
            exploration: 0.01,
            decay: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub steps: u32,
    pub batch_size: usize,
    pub pg: PgConfig,
    /// Refit the reward model every this many steps.
    pub refit_every: u32,
    /// Most recent preference pairs kept for refitting.
    pub pair_buffer: usize,
    pub fit: FitConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            steps: 200,
            batch_size: 32,
            pg: PgConfig::default(),
            refit_every: 10,
            pair_buffer: 256,
            fit: FitConfig::default(),
        }
    }
}

/// Everything a training loop reads but never writes.
#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub train: &'a [Task],
    pub validation: &'a [Task],
    pub registry: &'a ToolRegistry,
    pub substrate: &'a Substrate,
    /// Validation fitness of the incumbent; training stops early once the
    /// clone leads it by `epsilon_verify`.
    pub incumbent_fitness: f64,
    pub epsilon_verify: f64,
    pub cell_width: f64,
    pub episode: u32,
    pub seeds: SeedTree,
    pub execution: Execution,
}

impl TrainContext<'_> {
    fn fitness(&self, params: &AgentParams) -> Result<f64> {
        fitness_with(params, self.validation, self.registry, self.substrate, self.execution)
    }

    fn reached_target(&self, perf: f64) -> bool {
        perf - self.incumbent_fitness >= self.epsilon_verify
    }

    /// Attempts on a batch, attempt `j` of step `step` on its own substream.
    fn rollout(&self, agent: &Agent, tasks: &[&Task], stream: SeedTree) -> Result<Vec<Trace>> {
        let indexed: Vec<(usize, &Task)> = tasks.iter().copied().enumerate().collect();
        self.execution
            .map(&indexed, |(j, task)| {
                let mut rng = stream.child(&task.id).index(*j as u64).rng();
                attempt(agent, task, self.registry, self.substrate, &mut rng)
            })
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub episode: u32,
    pub step: u32,
    pub mode: EvolutionMode,
    /// Curriculum bucket (CL), step index (RL) or generation (GA).
    pub unit: u32,
    pub val_perf: f64,
    pub mean_tool_use: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub curriculum: Option<CurriculumState>,
    pub reward_model: Option<RewardModel>,
    pub telemetry: Vec<TrainingRow>,
    /// Quantised parameter-space cells of every candidate evaluated.
    pub cells: Vec<Vec<i64>>,
    pub final_fitness: f64,
}

/// Grid cell containing `params` (floor of each coordinate over `width`).
pub fn grid_cell(params: &AgentParams, width: f64) -> Vec<i64> {
    params.to_vec().iter().map(|v| (v / width).floor() as i64).collect()
}

fn check_clone(clone: &Agent) -> Result<()> {
    if clone.status != AgentStatus::CloneInTraining {
        return Err(Error::contract(format!(
            "agent `{}` is not a clone in training",
            clone.id
        )));
    }
    Ok(())
}

fn tool_use(traces: &[Trace]) -> f64 {
    if traces.is_empty() {
        return 0.0;
    }
    traces.iter().map(|t| t.tool_calls() as f64).sum::<f64>() / traces.len() as f64
}

fn env_reward<'a>(ctx: &'a TrainContext<'a>) -> impl Fn(&Trace, &Task) -> f64 + 'a {
    move |t, _| t.reward(ctx.registry, ctx.substrate.lambda_cost)
}

/// Curriculum training: bandit over difficulty buckets of the train split,
/// one policy-gradient step on the chosen bucket per iteration, with the
/// resulting validation gain fed back to the bandit.
pub fn cl_train(
    clone: &Agent,
    state: CurriculumState,
    ctx: &TrainContext<'_>,
    config: &ClConfig,
) -> Result<(Agent, CurriculumState, TrainOutcome)> {
    check_clone(clone)?;
    if config.batch_size == 0 {
        return Err(Error::config("cl.batch_size", "must be positive"));
    }
    let mut buckets: BTreeMap<u32, Vec<&Task>> = BTreeMap::new();
    for t in ctx.train {
        buckets.entry(t.difficulty).or_default().push(t);
    }
    let mut agent = clone.clone();
    let mut state = state;
    let mut perf = ctx.fitness(&agent.params)?;
    let mut telemetry = Vec::new();
    let mut cells = vec![grid_cell(&agent.params, ctx.cell_width)];
    let root = ctx.seeds.child("cl").child(&clone.id);
    for step in 0..config.steps {
        if ctx.reached_target(perf) {
            break;
        }
        let bucket = select_bucket_masked(&state, |t| buckets.get(&t).is_some_and(|b| !b.is_empty()))?;
        let pool = &buckets[&bucket];
        let mut rng = root.child("sample").index(step as u64).rng();
        let batch: Vec<&Task> = (0..config.batch_size)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        let traces = ctx.rollout(&agent, &batch, root.child("attempt").index(step as u64))?;
        let pairs: Vec<(Trace, &Task)> = traces.iter().cloned().zip(batch.iter().copied()).collect();
        agent.params = policy_gradient_step(&agent.params, &pairs, env_reward(ctx), &config.pg, ctx.substrate)?;
        let next = ctx.fitness(&agent.params)?;
        state = update_bucket_stats(&state, bucket, next - perf)?;
        perf = next;
        cells.push(grid_cell(&agent.params, ctx.cell_width));
        telemetry.push(TrainingRow {
            episode: ctx.episode,
            step,
            mode: EvolutionMode::Cl,
            unit: bucket,
            val_perf: perf,
            mean_tool_use: tool_use(&traces),
        });
    }
    let outcome = TrainOutcome {
        agent: agent.clone(),
        curriculum: Some(state.clone()),
        reward_model: None,
        telemetry,
        cells,
        final_fitness: perf,
    };
    Ok((agent, state, outcome))
}

/// Pairs within a batch: best with worst, second best with second worst, ...
/// keeping only strict preferences.
fn preference_pairs(traces: &[Trace], rewards: &[f64]) -> Vec<(Trace, Trace)> {
    let mut order: Vec<usize> = (0..traces.len()).collect();
    order.sort_by(|a, b| rewards[*b].total_cmp(&rewards[*a]).then(a.cmp(b)));
    let n = order.len();
    (0..n / 2)
        .filter(|i| rewards[order[*i]] > rewards[order[n - 1 - i]])
        .map(|i| (traces[order[i]].clone(), traces[order[n - 1 - i]].clone()))
        .collect()
}

/// Reward-model training: traces are ranked by environment reward into
/// preference pairs, a Bradley-Terry model is refit periodically, and the
/// policy follows the model's scores.
pub fn rl_train(clone: &Agent, ctx: &TrainContext<'_>, config: &RlConfig) -> Result<TrainOutcome> {
    check_clone(clone)?;
    if config.batch_size == 0 {
        return Err(Error::config("rl.batch_size", "must be positive"));
    }
    if ctx.train.is_empty() {
        return Err(Error::config("rl.train", "training split is empty"));
    }
    let mut agent = clone.clone();
    let mut model = RewardModel::success_prior();
    let mut buffer: Vec<(Trace, Trace)> = Vec::new();
    let mut perf = ctx.fitness(&agent.params)?;
    let mut telemetry = Vec::new();
    let mut cells = vec![grid_cell(&agent.params, ctx.cell_width)];
    let root = ctx.seeds.child("rl").child(&clone.id);
    for step in 0..config.steps {
        if ctx.reached_target(perf) {
            break;
        }
        let mut rng = root.child("sample").index(step as u64).rng();
        let batch: Vec<&Task> = (0..config.batch_size)
            .map(|_| &ctx.train[rng.random_range(0..ctx.train.len())])
            .collect();
        let traces = ctx.rollout(&agent, &batch, root.child("attempt").index(step as u64))?;
        let env: Vec<f64> = traces
            .iter()
            .map(|t| t.reward(ctx.registry, ctx.substrate.lambda_cost))
            .collect();
        buffer.extend(preference_pairs(&traces, &env));
        if buffer.len() > config.pair_buffer {
            buffer.drain(..buffer.len() - config.pair_buffer);
        }
        if config.refit_every > 0 && step % config.refit_every == 0 && !buffer.is_empty() {
            model = fit_reward_model_from(&model, &buffer, &config.fit)?;
        }
        let pairs: Vec<(Trace, &Task)> = traces.iter().cloned().zip(batch.iter().copied()).collect();
        agent.params = policy_gradient_step(
            &agent.params,
            &pairs,
            |t, _| score_trace(&model, t),
            &config.pg,
            ctx.substrate,
        )?;
        perf = ctx.fitness(&agent.params)?;
        cells.push(grid_cell(&agent.params, ctx.cell_width));
        telemetry.push(TrainingRow {
            episode: ctx.episode,
            step,
            mode: EvolutionMode::Rl,
            unit: step,
            val_perf: perf,
            mean_tool_use: tool_use(&traces),
        });
    }
    Ok(TrainOutcome {
        agent,
        curriculum: None,
        reward_model: Some(model),
        telemetry,
        cells,
        final_fitness: perf,
    })
}

/// GA training: a population seeded around the clone evolves on validation
/// fitness; the clone takes the best member's parameters.
pub fn ga_train(clone: &Agent, ctx: &TrainContext<'_>, config: &GaConfig) -> Result<TrainOutcome> {
    check_clone(clone)?;
    let root = ctx.seeds.child("ga").child(&clone.id);
    let mut rng = root.rng();
    let fit = |p: &AgentParams| ctx.fitness(p).unwrap_or(f64::NEG_INFINITY);
    // dimension errors would otherwise hide behind -inf fitness
    ctx.fitness(&clone.params)?;
    let mut pop = Population::around(&clone.params, config.clone(), fit, &mut rng, ctx.execution)?;
    let mut cells: Vec<Vec<i64>> = pop
        .members
        .iter()
        .map(|m| grid_cell(&m.params, ctx.cell_width))
        .collect();
    let tool_rate = {
        let covered = ctx
            .validation
            .iter()
            .filter(|t| ctx.registry.best_for(t).is_some())
            .count();
        covered as f64 / ctx.validation.len().max(1) as f64
    };
    let mut telemetry = vec![TrainingRow {
        episode: ctx.episode,
        step: 0,
        mode: EvolutionMode::Ga,
        unit: 0,
        val_perf: pop.best_fitness(),
        mean_tool_use: tool_rate,
    }];
    while pop.generation < config.generations && !ctx.reached_target(pop.best_fitness()) {
        pop = evolve_generation(&pop, fit, &mut rng, ctx.execution)?;
        cells.extend(
            pop.members[config.elite_count..]
                .iter()
                .map(|m| grid_cell(&m.params, ctx.cell_width)),
        );
        telemetry.push(TrainingRow {
            episode: ctx.episode,
            step: pop.generation,
            mode: EvolutionMode::Ga,
            unit: pop.generation,
            val_perf: pop.best_fitness(),
            mean_tool_use: tool_rate,
        });
    }
    let best = pop.best().ok_or_else(|| Error::contract("empty population"))?;
    let mut agent = clone.clone();
    agent.params = best.params.clone();
    Ok(TrainOutcome {
        agent,
        curriculum: None,
        reward_model: None,
        telemetry,
        cells,
        final_fitness: pop.best_fitness(),
    })
}
