//! Experiment harness: configuration, runs, metrics, comparisons,
//! checkpoints and report files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::lifecycle::{LifecycleRun, RunSummary};
use crate::Result;

pub mod checkpoint;
pub mod config;
pub mod criteria;
pub mod metrics;
pub mod report;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};
pub use config::{apply_override, RunConfig};
pub use criteria::{compare_paradigms, CriteriaReport, Criterion, SeedMeasures};
pub use metrics::{MetricPoint, MetricSeries};
pub use report::ReportFormat;

pub fn execution_for(config: &RunConfig) -> Execution {
    if config.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// A fresh run for `config`, not yet stepped.
pub fn start_run(config: &RunConfig) -> Result<LifecycleRun> {
    config.validate()?;
    let tasks = config.load_tasks()?;
    Ok(LifecycleRun::new(config.lifecycle.clone(), tasks, config.seed)?.with_execution(execution_for(config)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub run: LifecycleRun,
    pub summary: RunSummary,
    pub series: Vec<MetricSeries>,
}

impl ExperimentOutput {
    pub fn from_run(run: LifecycleRun) -> Result<Self> {
        Ok(ExperimentOutput {
            summary: run.summary()?,
            series: metrics::run_series(&run)?,
            run,
        })
    }
}

/// Runs `config` to the end, checkpointing into `checkpoint_dir` every
/// `config.checkpoint_every` steps when a directory is given.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentOutput> {
    run_from(config, start_run(config)?, None)
}

pub fn run_from(config: &RunConfig, mut run: LifecycleRun, checkpoint_dir: Option<&Path>) -> Result<ExperimentOutput> {
    while !run.is_finished() {
        run.step()?;
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && run.step.is_multiple_of(config.checkpoint_every) && !run.is_finished() {
                checkpoint_save(dir.join(format!("checkpoint-{:06}.json", run.step)), config, &run)?;
            }
        }
    }
    ExperimentOutput::from_run(run)
}

/// Continues a checkpointed run to the end.
pub fn resume(path: impl AsRef<Path>, checkpoint_dir: Option<&Path>) -> Result<(RunConfig, ExperimentOutput)> {
    let cp = checkpoint_load(path)?;
    let out = run_from(&cp.config, cp.state, checkpoint_dir)?;
    Ok((cp.config, out))
}

/// Writes the run log, summary, series and training telemetry into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let ext = format.extension();
    let runlog = dir.join("runlog.jsonl");
    std::fs::write(&runlog, out.run.runlog_jsonl()?)?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(&out.summary)? + "\n")?;
    let mut paths = vec![runlog, summary];
    for s in &out.series {
        let p = dir.join(format!("{}.{ext}", s.name));
        report::emit_series(std::slice::from_ref(s), &p, format)?;
        paths.push(p);
    }
    let training = dir.join(format!("training.{ext}"));
    report::emit_training(&out.run.telemetry, &training, format)?;
    paths.push(training);
    Ok(paths)
}

/// Writes a comparison's report and per-seed measurements into `dir`.
pub fn write_comparison(cmp: &criteria::Comparison, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let ext = format.extension();
    let json = dir.join("criteria.json");
    std::fs::write(&json, serde_json::to_string_pretty(&cmp.report)? + "\n")?;
    let table = dir.join(format!("criteria.{ext}"));
    report::emit_criteria(&cmp.report, &table, format)?;
    let measures = dir.join(format!("measures.{ext}"));
    report::emit_measures(&cmp.measures, &measures, format)?;
    Ok(vec![json, table, measures])
}
