//! `evoagent`: command-line front end for the simulation harness.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evoagent_core::harness::{self, config, criteria, RunConfig};
use evoagent_core::lifecycle::ModePolicy;
use evoagent_core::taskenv::{self, Split, TaskSet};

#[derive(Parser)]
#[command(name = "evoagent", version, about = "Simulated self-evolving agent lifecycle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML or JSON configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lifecycle.window=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Output directory (defaults to `output_dir` from the configuration).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Format of tabular outputs.
    #[arg(long, default_value = "csv", value_parser = ["csv", "jsonl"])]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task set.
    GenTasks {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination; `.jsonl` writes TaskCraft records, anything else a task-set JSON.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Convert TaskCraft JSONL into a split task-set JSON.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArgs,
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run one lifecycle experiment.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, value_parser = ["cl", "rl", "ga", "auto"])]
        mode: Option<String>,
    },
    /// Compare the three paradigms over several seeds.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        /// First seed; seeds are consecutive from here.
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
    },
    /// Re-emit summary and metric files from a checkpoint.
    Report {
        checkpoint: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Continue a checkpointed run to the end.
    Resume {
        checkpoint: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn load(cfg: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(cfg.config.as_deref(), &cfg.overrides).context("loading configuration")
}

fn show(label: &str, path: &Path) {
    println!("{label:<12}{}", path.display());
}

fn banner(config: &RunConfig, config_file: Option<&Path>, out: &Path) {
    println!("seed        {}", config.seed);
    match config_file {
        Some(p) => show("config", p),
        None => println!("config      (defaults)"),
    }
    match &config.tasks_path {
        Some(p) => show("tasks", p),
        None => println!("tasks       (generated)"),
    }
    show("output", out);
}

fn output_dir(config: &RunConfig, output: &OutputArgs) -> PathBuf {
    output.out.clone().unwrap_or_else(|| config.output_dir.clone())
}

fn write_tasks(set: &TaskSet, out: &Path) -> Result<()> {
    if out.extension().is_some_and(|e| e == "jsonl") {
        let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        taskenv::export_taskcraft(set, std::io::BufWriter::new(file))?;
    } else {
        std::fs::write(out, serde_json::to_string(set)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn describe(set: &TaskSet) {
    for (tier, ids) in &set.buckets {
        let count = |s: Split| set.split_bucket(s, *tier).len();
        println!(
            "tier {tier}: {:>4} tasks  train {:>4}  val {:>4}  test {:>4}",
            ids.len(),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test)
        );
    }
}

fn finish(out: &harness::ExperimentOutput, config: &RunConfig, dir: &Path, format: &str) -> Result<()> {
    let format = format.parse()?;
    for p in harness::write_outputs(out, dir, format)? {
        show("wrote", &p);
    }
    let final_state = dir.join("final.json");
    harness::checkpoint_save(&final_state, config, &out.run)?;
    show("wrote", &final_state);
    let s = &out.summary;
    println!(
        "status {:?}: {} steps, {} episodes, {} promoted, {} rejected, {} tools, spent {:.3}/{:.3}",
        s.status, s.steps, s.episodes, s.promotions, s.rejections, s.syntheses, s.spent, s.budget
    );
    println!(
        "validation fitness {:.4} (seed agent) -> {:.4} (best active)",
        s.seed_val_fitness, s.final_val_fitness
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenTasks { cfg, out } => {
            let config = load(&cfg)?;
            banner(&config, cfg.config.as_deref(), &out);
            let set = taskenv::generate_tasks(&config.generator, config.seed)?;
            write_tasks(&set, &out)?;
            describe(&set);
        }
        Command::Ingest { cfg, input, out } => {
            let config = load(&cfg)?;
            banner(&config, cfg.config.as_deref(), &out);
            show("input", &input);
            let set = taskenv::ingest_taskcraft_with(&input, &config.ingest)
                .with_context(|| format!("ingesting {}", input.display()))?;
            let set = taskenv::stratified_split(&set, config.generator.split_ratios, config.seed)?;
            write_tasks(&set, &out)?;
            describe(&set);
        }
        Command::Run { cfg, output, mode } => {
            let mut config = load(&cfg)?;
            if let Some(mode) = mode {
                config.lifecycle.mode = mode.parse::<ModePolicy>()?;
            }
            let dir = output_dir(&config, &output);
            banner(&config, cfg.config.as_deref(), &dir);
            println!("mode        {}", config.lifecycle.mode);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("config.toml"), config::to_toml(&config)?)?;
            let run = harness::start_run(&config)?;
            let out = harness::run_from(&config, run, Some(&dir))?;
            finish(&out, &config, &dir, &output.format)?;
        }
        Command::Compare {
            cfg,
            output,
            seeds,
            first_seed,
        } => {
            let config = load(&cfg)?;
            let dir = output_dir(&config, &output);
            let seed_list: Vec<u64> = (0..seeds as u64).map(|i| first_seed + i).collect();
            banner(&config, cfg.config.as_deref(), &dir);
            println!("seeds       {seed_list:?}");
            let cmp = criteria::compare_paradigms(&config, &seed_list)?;
            for p in harness::write_comparison(&cmp, &dir, output.format.parse()?)? {
                show("wrote", &p);
            }
            for w in &cmp.report.winners {
                let names: Vec<String> = w.winners.iter().map(|m| m.to_string()).collect();
                println!(
                    "{:<30} {}{}",
                    w.criterion.title(),
                    names.join(", "),
                    if w.tie { " (tie)" } else { "" }
                );
            }
        }
        Command::Report { checkpoint, output } => {
            let cp =
                harness::checkpoint_load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let dir = output_dir(&cp.config, &output);
            banner(&cp.config, None, &dir);
            show("checkpoint", &checkpoint);
            if !cp.state.is_finished() {
                bail!("checkpoint is mid-run; use `resume` to finish it first");
            }
            let out = harness::ExperimentOutput::from_run(cp.state)?;
            for p in harness::write_outputs(&out, &dir, output.format.parse()?)? {
                show("wrote", &p);
            }
        }
        Command::Resume { checkpoint, output } => {
            let cp =
                harness::checkpoint_load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let dir = output_dir(&cp.config, &output);
            banner(&cp.config, None, &dir);
            show("checkpoint", &checkpoint);
            println!("resume at   step {}", cp.state.step);
            std::fs::create_dir_all(&dir)?;
            let out = harness::run_from(&cp.config, cp.state, Some(&dir))?;
            finish(&out, &cp.config, &dir, &output.format)?;
        }
    }
    Ok(())
}
