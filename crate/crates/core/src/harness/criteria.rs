//! Seven-dimension comparison of the evolution paradigms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{mean_stderr, std_dev};
use super::RunConfig;
use crate::agentcore::{success_rate, AgentParams};
use crate::evolution::EvolutionMode;
use crate::exec::Execution;
use crate::lifecycle::{Decision, LifecycleRun, ModePolicy};
use crate::taskenv::Split;
use crate::{Error, Result};

pub const MIN_SEEDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    LearningSpeed,
    Generalization,
    HighDifficultyMastery,
    Exploration,
    Stability,
    Diversity,
    ToolEfficiency,
}

impl Criterion {
    pub const ALL: [Criterion; 7] = [
        Criterion::LearningSpeed,
        Criterion::Generalization,
        Criterion::HighDifficultyMastery,
        Criterion::Exploration,
        Criterion::Stability,
        Criterion::Diversity,
        Criterion::ToolEfficiency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::LearningSpeed => "learning_speed",
            Criterion::Generalization => "generalization",
            Criterion::HighDifficultyMastery => "high_difficulty_mastery",
            Criterion::Exploration => "exploration",
            Criterion::Stability => "stability",
            Criterion::Diversity => "diversity",
            Criterion::ToolEfficiency => "tool_efficiency",
        }
    }

    /// Row label as used in the comparison table.
    pub fn title(self) -> &'static str {
        match self {
            Criterion::LearningSpeed => "Learning Speed",
            Criterion::Generalization => "Generalization",
            Criterion::HighDifficultyMastery => "High-Difficulty Task Mastery",
            Criterion::Exploration => "Exploration / Novel Behaviors",
            Criterion::Stability => "Stability",
            Criterion::Diversity => "Diversity of Solutions",
            Criterion::ToolEfficiency => "Tool Efficiency",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Criterion::LearningSpeed | Criterion::ToolEfficiency)
    }

    pub fn procedure(self) -> &'static str {
        match self {
            Criterion::LearningSpeed => {
                "evolution episodes up to and including the first promotion (max_episodes + 1 if none); lower is better"
            }
            Criterion::Generalization => "test-split fitness of the best final active agent",
            Criterion::HighDifficultyMastery => "success rate of the best final active agent on the top test tier",
            Criterion::Exploration => "distinct parameter-grid cells visited by every evaluated candidate",
            Criterion::Stability => "1 / (std of validation fitness across training + 1e-6)",
            Criterion::Diversity => "mean pairwise Euclidean distance of final parameters across seeds",
            Criterion::ToolEfficiency => "tool budget spent per successful attempt; lower is better",
        }
    }
}

/// Per-seed measurements of one fixed-mode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMeasures {
    pub seed: u64,
    pub mode: EvolutionMode,
    pub learning_speed: f64,
    pub generalization: f64,
    pub high_difficulty_mastery: f64,
    pub exploration: f64,
    pub stability: f64,
    pub tool_efficiency: f64,
    pub final_params: AgentParams,
}

impl SeedMeasures {
    pub fn get(&self, c: Criterion) -> Option<f64> {
        Some(match c {
            Criterion::LearningSpeed => self.learning_speed,
            Criterion::Generalization => self.generalization,
            Criterion::HighDifficultyMastery => self.high_difficulty_mastery,
            Criterion::Exploration => self.exploration,
            Criterion::Stability => self.stability,
            Criterion::ToolEfficiency => self.tool_efficiency,
            Criterion::Diversity => return None,
        })
    }
}

pub fn measure_run(run: &LifecycleRun, mode: EvolutionMode) -> Result<SeedMeasures> {
    let best = run.best_active()?.params.clone();
    let learning_speed = run
        .promotion_records()
        .find(|r| r.decision == Decision::Promoted)
        .map_or(run.config.max_episodes as f64 + 1.0, |r| r.episode as f64 + 1.0);
    let top = run.tasks.max_tier();
    let mut top_rates = Vec::new();
    for task in run.tasks.split_tasks(Split::Test) {
        if task.difficulty == top {
            top_rates.push(success_rate(&best, &task, &run.registry, &run.config.substrate)?);
        }
    }
    let val_perf: Vec<f64> = run.telemetry.iter().map(|r| r.val_perf).collect();
    Ok(SeedMeasures {
        seed: run.seed,
        mode,
        learning_speed,
        generalization: run.split_fitness(&best, Split::Test)?,
        high_difficulty_mastery: mean_stderr(&top_rates).0,
        exploration: run.cells.len() as f64,
        stability: 1.0 / (std_dev(&val_perf) + 1e-6),
        tool_efficiency: run.registry.spent / run.successes.max(1) as f64,
        final_params: best,
    })
}

/// Mean and standard error of all pairwise distances.
pub fn pairwise_diversity(params: &[AgentParams]) -> (f64, f64) {
    let mut d = Vec::new();
    for i in 0..params.len() {
        for j in i + 1..params.len() {
            d.push(params[i].distance(&params[j]));
        }
    }
    mean_stderr(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion: Criterion,
    pub paradigm: EvolutionMode,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub higher_is_better: bool,
    pub winner: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionWinner {
    pub criterion: Criterion,
    pub winners: Vec<EvolutionMode>,
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub seeds: Vec<u64>,
    /// How each dimension is measured, keyed by criterion name.
    pub procedures: BTreeMap<String, String>,
    pub scores: Vec<CriterionScore>,
    pub winners: Vec<CriterionWinner>,
}

impl CriteriaReport {
    pub fn score(&self, c: Criterion, m: EvolutionMode) -> Option<&CriterionScore> {
        self.scores.iter().find(|s| s.criterion == c && s.paradigm == m)
    }

    pub fn winner(&self, c: Criterion) -> Option<&CriterionWinner> {
        self.winners.iter().find(|w| w.criterion == c)
    }
}

/// Folds per-seed measurements into the report. Means that compare equal
/// are reported as a tie.
pub fn build_report(measures: &[SeedMeasures], seeds: &[u64]) -> Result<CriteriaReport> {
    let mut scores = Vec::new();
    let mut winners = Vec::new();
    for c in Criterion::ALL {
        let mut row = Vec::new();
        for m in EvolutionMode::ALL {
            let mine: Vec<&SeedMeasures> = measures.iter().filter(|s| s.mode == m).collect();
            if mine.is_empty() {
                return Err(Error::contract(format!("no measurements for {m}")));
            }
            let (mean, stderr, n) = match c {
                Criterion::Diversity => {
                    let params: Vec<AgentParams> = mine.iter().map(|s| s.final_params.clone()).collect();
                    let (mean, stderr) = pairwise_diversity(&params);
                    (mean, stderr, params.len())
                }
                _ => {
                    let vals: Vec<f64> = mine.iter().filter_map(|s| s.get(c)).collect();
                    let (mean, stderr) = mean_stderr(&vals);
                    (mean, stderr, vals.len())
                }
            };
            row.push(CriterionScore {
                criterion: c,
                paradigm: m,
                mean,
                stderr,
                n,
                higher_is_better: c.higher_is_better(),
                winner: false,
            });
        }
        let best = row
            .iter()
            .map(|s| if c.higher_is_better() { s.mean } else { -s.mean })
            .fold(f64::NEG_INFINITY, f64::max);
        let mut won = Vec::new();
        for s in &mut row {
            let v = if c.higher_is_better() { s.mean } else { -s.mean };
            if v == best {
                s.winner = true;
                won.push(s.paradigm);
            }
        }
        winners.push(CriterionWinner {
            criterion: c,
            tie: won.len() > 1,
            winners: won,
        });
        scores.extend(row);
    }
    Ok(CriteriaReport {
        seeds: seeds.to_vec(),
        procedures: Criterion::ALL
            .iter()
            .map(|c| (c.name().to_string(), c.procedure().to_string()))
            .collect(),
        scores,
        winners,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub report: CriteriaReport,
    pub measures: Vec<SeedMeasures>,
}

/// Runs every paradigm as a fixed-mode experiment for every seed and scores
/// the seven dimensions.
pub fn compare_paradigms(config: &RunConfig, seeds: &[u64]) -> Result<Comparison> {
    if seeds.len() < MIN_SEEDS {
        return Err(Error::config(
            "seeds",
            format!("comparison needs at least {MIN_SEEDS} seeds, got {}", seeds.len()),
        ));
    }
    config.validate()?;
    let jobs: Vec<(u64, EvolutionMode)> = seeds.iter().flat_map(|s| EvolutionMode::ALL.map(|m| (*s, m))).collect();
    let execution = super::execution_for(config);
    let measures = execution
        .map(&jobs, |(seed, mode)| {
            let mut c = config.clone();
            c.seed = *seed;
            c.lifecycle.mode = ModePolicy::Fixed(*mode);
            let mut run = super::start_run(&c)?.with_execution(Execution::Sequential);
            run.run_to_end()?;
            measure_run(&run, *mode)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        report: build_report(&measures, seeds)?,
        measures,
    })
}
