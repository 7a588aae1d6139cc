//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use evoagent_core::agentcore::{AgentParams, Trace};
use evoagent_core::evolution::{evolve_generation, EvolutionMode, GaConfig, Population};
use evoagent_core::exec::Execution;
use evoagent_core::harness::RunConfig;
use evoagent_core::lifecycle::{LifecycleRun, ModePolicy};
use evoagent_core::rng::SeedTree;
use evoagent_core::taskenv::{StepRecord, Task};
use evoagent_core::toolforge::{Tool, ToolRegistry};
use serde_json::Value;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn task(id: &str, features: Vec<f64>, caps: Vec<f64>, tier: u32) -> Task {
    Task {
        id: id.into(),
        description: String::new(),
        features,
        difficulty: tier,
        required_caps: caps,
        composition_depth: tier,
        gold_output: Value::Null,
        gold_trace: None,
        tool_calls: vec![],
    }
}

pub fn params(weights: &[f64], bias: f64) -> AgentParams {
    AgentParams {
        weights: weights.to_vec(),
        bias,
    }
}

pub fn tool(id: &str, caps: Vec<f64>, exec_prob: f64, cost: f64) -> Tool {
    Tool {
        cost,
        ..Tool::builtin(id, caps, exec_prob)
    }
}

pub fn registry(tools: Vec<Tool>) -> ToolRegistry {
    ToolRegistry::new("reg", 1e9).unwrap().with_builtins(tools).unwrap()
}

pub fn trace(coverage: f64, success: bool, cost: f64, steps: usize, difficulty: u32) -> Trace {
    Trace {
        task_id: "t".into(),
        agent_id: "a".into(),
        steps: (0..steps).map(|i| StepRecord::reasoning(i as u64)).collect(),
        tool_used: None,
        coverage,
        difficulty,
        reasoning_ok: success,
        success,
        raw_task_reward: if success { 1.0 } else { 0.0 },
        exec_ok: true,
        cost_incurred: cost,
        is_unsafe: false,
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64).ln() - (i as f64).ln()).sum()
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`, summed term by term in log space.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> f64 {
    (0..=k.min(n))
        .map(|i| (ln_choose(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp())
        .sum()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect()
}

pub const SPHERE_OPTIMUM: [f64; 5] = [1.0, -0.5, 0.5, 0.25, -0.75];

pub fn sphere(p: &AgentParams) -> f64 {
    -p.to_vec()
        .iter()
        .zip(SPHERE_OPTIMUM)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
}

/// Best fitness of every generation of a pop-16, 30-generation GA on the
/// sphere landscape, starting around the origin.
pub fn sphere_ga(seed: u64) -> Vec<f64> {
    let config = GaConfig {
        size: 16,
        generations: 30,
        ..GaConfig::default()
    };
    let seeds = SeedTree::new(seed);
    let center = AgentParams::zeros(SPHERE_OPTIMUM.len() - 1);
    let mut pop = Population::around(
        &center,
        config.clone(),
        sphere,
        &mut seeds.child("init").rng(),
        Execution::Sequential,
    )
    .unwrap();
    let mut best = vec![pop.best_fitness()];
    for g in 0..config.generations {
        pop = evolve_generation(&pop, sphere, &mut seeds.index(g as u64).rng(), Execution::Sequential).unwrap();
        best.push(pop.best_fitness());
    }
    best
}

pub fn default_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..RunConfig::default()
    }
}

pub fn fixed(seed: u64, mode: EvolutionMode) -> RunConfig {
    let mut c = default_config(seed);
    c.lifecycle.mode = ModePolicy::Fixed(mode);
    c
}

pub fn finished_run(config: &RunConfig) -> LifecycleRun {
    let mut run = evoagent_core::harness::start_run(config).unwrap();
    run.run_to_end().unwrap();
    run
}
