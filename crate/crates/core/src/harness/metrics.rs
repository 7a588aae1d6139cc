//! Metric series extracted from a finished run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agentcore::{success_rate, AgentParams};
use crate::lifecycle::{Event, LifecycleRun};
use crate::taskenv::Split;
use crate::{Error, Result};

/// Stream steps per tool-use window.
pub const TOOL_USE_WINDOW: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub x: f64,
    pub y: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<MetricPoint>,
}

impl MetricSeries {
    pub fn new(name: &str, x_label: &str, y_label: &str, points: Vec<MetricPoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[1].x > w[0].x)) {
            return Err(Error::contract(format!("series `{name}` has non-increasing x values")));
        }
        Ok(MetricSeries {
            name: name.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            points,
        })
    }
}

/// Mean and standard error of the mean (0 for fewer than two values).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Success rate of `params` per difficulty tier of `split`, one point per
/// tier that has tasks.
pub fn success_by_tier(run: &LifecycleRun, params: &AgentParams, split: Split) -> Result<MetricSeries> {
    let mut by_tier: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for task in run.tasks.split_tasks(split) {
        let rate = success_rate(params, &task, &run.registry, &run.config.substrate)?;
        by_tier.entry(task.difficulty).or_default().push(rate);
    }
    let points = by_tier
        .into_iter()
        .map(|(tier, rates)| {
            let (y, stderr) = mean_stderr(&rates);
            MetricPoint {
                x: tier as f64,
                y,
                stderr,
            }
        })
        .collect();
    MetricSeries::new("success_by_tier", "difficulty_tier", "success_rate", points)
}

/// Mean tool calls per task (first attempt plus any retry), per window of
/// [`TOOL_USE_WINDOW`] stream steps; `x` is the window's last step.
pub fn tool_use_over_training(run: &LifecycleRun) -> Result<MetricSeries> {
    let mut per_step: BTreeMap<u64, f64> = BTreeMap::new();
    for e in &run.events {
        if let Event::Attempt { step, tool_id, .. } = e {
            *per_step.entry(*step).or_default() += if tool_id.is_some() { 1.0 } else { 0.0 };
        }
    }
    let mut windows: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (step, calls) in per_step {
        windows.entry(step / TOOL_USE_WINDOW).or_default().push(calls);
    }
    let points = windows
        .into_iter()
        .map(|(w, uses)| {
            let (y, stderr) = mean_stderr(&uses);
            MetricPoint {
                x: ((w + 1) * TOOL_USE_WINDOW - 1) as f64,
                y,
                stderr,
            }
        })
        .collect();
    MetricSeries::new("tool_use", "step", "tool_calls_per_task", points)
}

/// Validation fitness of each generation that became active, averaged over
/// lineages.
pub fn performance_by_generation(run: &LifecycleRun) -> Result<MetricSeries> {
    let mut by_gen: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for g in &run.generations {
        by_gen.entry(g.generation).or_default().push(g.val_fitness);
    }
    let points = by_gen
        .into_iter()
        .map(|(generation, vals)| {
            let (y, stderr) = mean_stderr(&vals);
            MetricPoint {
                x: generation as f64,
                y,
                stderr,
            }
        })
        .collect();
    MetricSeries::new("performance_by_generation", "generation", "val_fitness", points)
}

/// The three standard series for a finished run, evaluated with the best
/// active agent.
pub fn run_series(run: &LifecycleRun) -> Result<Vec<MetricSeries>> {
    let best = run.best_active()?.params.clone();
    Ok(vec![
        success_by_tier(run, &best, Split::Test)?,
        tool_use_over_training(run)?,
        performance_by_generation(run)?,
    ])
}
