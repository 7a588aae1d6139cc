//! Tasks, difficulty buckets and stratified splits.
//!
//! Tasks come from two places: a seeded synthetic generator, or TaskCraft-style
//! JSONL where each line is one flattened record
//! (`task_description`, `difficulty`, `trajectory`, `tool_calls`,
//! `final_output`, optional `id`).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::rng::SeedTree;
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_MAX_TIER: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Reasoning,
    ToolCall,
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    #[serde(alias = "type")]
    pub kind: StepKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_id: Option<String>,
    #[serde(default)]
    pub payload: Value,
}

impl StepRecord {
    pub fn reasoning(payload: impl Into<Value>) -> Self {
        StepRecord {
            kind: StepKind::Reasoning,
            tool_id: None,
            payload: payload.into(),
        }
    }

    pub fn tool_call(tool_id: impl Into<String>, payload: impl Into<Value>) -> Self {
        StepRecord {
            kind: StepKind::ToolCall,
            tool_id: Some(tool_id.into()),
            payload: payload.into(),
        }
    }

    pub fn observation(payload: impl Into<Value>) -> Self {
        StepRecord {
            kind: StepKind::Observation,
            tool_id: None,
            payload: payload.into(),
        }
    }

    /// `tool_id` must be present exactly for tool calls.
    pub fn is_well_formed(&self) -> bool {
        (self.kind == StepKind::ToolCall) == self.tool_id.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub features: Vec<f64>,
    pub difficulty: u32,
    pub required_caps: Vec<f64>,
    pub composition_depth: u32,
    pub gold_output: Value,
    #[serde(default)]
    pub gold_trace: Option<Vec<StepRecord>>,
    #[serde(default)]
    pub tool_calls: Vec<String>,
}

impl Task {
    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn demand(&self) -> f64 {
        self.required_caps.iter().sum()
    }
}

/// Difficulty tier as a function of composition depth.
pub fn difficulty_for_depth(depth: u32, max_tier: u32) -> u32 {
    depth.clamp(1, max_tier.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<String> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

pub type Buckets = BTreeMap<u32, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<Task>,
    pub buckets: Buckets,
    pub splits: Splits,
}

impl TaskSet {
    /// Builds a set with every task in the train split.
    pub fn from_tasks(tasks: Vec<Task>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for task in &tasks {
            if !seen.insert(task.id.as_str()) {
                return Err(Error::Duplicate(task.id.clone()));
            }
        }
        let buckets = bucketize(&tasks);
        let splits = Splits {
            train: tasks.iter().map(|t| t.id.clone()).collect(),
            ..Splits::default()
        };
        Ok(TaskSet { tasks, buckets, splits })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.tasks.first().map(Task::dim)
    }

    pub fn max_tier(&self) -> u32 {
        self.buckets.keys().next_back().copied().unwrap_or(0)
    }

    /// Tasks of one split, in task-set order.
    pub fn split_tasks(&self, split: Split) -> Vec<Task> {
        let members: BTreeSet<&str> = self.splits.get(split).iter().map(String::as_str).collect();
        self.tasks
            .iter()
            .filter(|t| members.contains(t.id.as_str()))
            .cloned()
            .collect()
    }

    /// Tasks of one split restricted to one difficulty tier.
    pub fn split_bucket(&self, split: Split, tier: u32) -> Vec<Task> {
        self.split_tasks(split)
            .into_iter()
            .filter(|t| t.difficulty == tier)
            .collect()
    }

    /// Checks the structural invariants: unique ids, consistent dimensions,
    /// buckets matching difficulty, and splits partitioning the ids.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for task in &self.tasks {
            if !ids.insert(task.id.as_str()) {
                return Err(Error::Duplicate(task.id.clone()));
            }
            if task.features.len() != task.required_caps.len() {
                return Err(Error::contract(format!(
                    "task `{}` has {} features but {} capability demands",
                    task.id,
                    task.features.len(),
                    task.required_caps.len()
                )));
            }
        }
        if let Some(dim) = self.dim() {
            if let Some(bad) = self.tasks.iter().find(|t| t.dim() != dim) {
                return Err(Error::contract(format!(
                    "task `{}` has dimension {} but the set uses {dim}",
                    bad.id,
                    bad.dim()
                )));
            }
        }
        if self.buckets != bucketize(&self.tasks) {
            return Err(Error::contract("buckets do not match task difficulties"));
        }
        let mut seen = BTreeSet::new();
        for split in Split::ALL {
            for id in self.splits.get(split) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::contract(format!("split member `{id}` is not a task")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::contract(format!("task `{id}` is in more than one split")));
                }
            }
        }
        if seen.len() != ids.len() {
            return Err(Error::contract("some tasks belong to no split"));
        }
        Ok(())
    }
}

/// Partitions task ids by difficulty tier, preserving input order inside each bucket.
pub fn bucketize(tasks: &[Task]) -> Buckets {
    let mut buckets = Buckets::new();
    for task in tasks {
        buckets.entry(task.difficulty).or_default().push(task.id.clone());
    }
    buckets
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub max_tier: u32,
    pub per_tier: usize,
    /// Lower end of every active capability demand.
    pub demand_floor: f64,
    /// Upper end of a tier-`t` demand is `demand_floor + t * demand_step`.
    pub demand_step: f64,
    pub feature_noise: f64,
    pub split_ratios: [f64; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: DEFAULT_DIM,
            max_tier: DEFAULT_MAX_TIER,
            per_tier: 100,
            demand_floor: 0.3,
            demand_step: 0.1,
            feature_noise: 0.5,
            split_ratios: [0.6, 0.2, 0.2],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("dim", "must be positive"));
        }
        if self.max_tier == 0 {
            return Err(Error::config("max_tier", "must be positive"));
        }
        if self.per_tier == 0 {
            return Err(Error::config("per_tier", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.demand_floor) {
            return Err(Error::config("demand_floor", "must lie in [0, 1]"));
        }
        if !(self.demand_step >= 0.0) {
            return Err(Error::config("demand_step", "must be non-negative"));
        }
        if !(self.feature_noise >= 0.0) {
            return Err(Error::config("feature_noise", "must be non-negative"));
        }
        check_ratios(&self.split_ratios, "split_ratios")
    }
}

/// Generates a synthetic task set and splits it.
///
/// A tier-`t` task has composition depth `t`, `min(dim, t + 1)` active
/// capability demands drawn from `U[floor, floor + t * step]`, and features
/// `2 * demand - 0.5` plus Gaussian noise, so competence is learnable from
/// the features. Each task draws from its own substream.
pub fn generate_tasks(config: &GeneratorConfig, seed: u64) -> Result<TaskSet> {
    config.validate()?;
    let root = SeedTree::new(seed);
    let noise = Normal::new(0.0, config.feature_noise).map_err(|e| Error::config("feature_noise", e.to_string()))?;
    let mut tasks = Vec::with_capacity(config.per_tier * config.max_tier as usize);
    for tier in 1..=config.max_tier {
        let hi = (config.demand_floor + config.demand_step * tier as f64).min(1.0);
        let active = (tier as usize + 1).min(config.dim);
        for k in 0..config.per_tier {
            let mut rng = root.child("task").index(tier as u64).index(k as u64).rng();
            let mut caps = vec![0.0; config.dim];
            for d in index::sample(&mut rng, config.dim, active) {
                caps[d] = if hi > config.demand_floor {
                    rng.random_range(config.demand_floor..hi)
                } else {
                    config.demand_floor
                };
            }
            let features = caps.iter().map(|c| 2.0 * c - 0.5 + noise.sample(&mut rng)).collect();
            let id = format!("t{tier}-{k:04}");
            let gold_trace = (0..tier)
                .map(|i| {
                    if i % 2 == 1 {
                        StepRecord::tool_call(format!("cap-{i}"), Value::Null)
                    } else {
                        StepRecord::reasoning(format!("step {i}"))
                    }
                })
                .collect();
            tasks.push(Task {
                gold_output: Value::String(format!("gold-{id}")),
                id,
                description: String::new(),
                features,
                difficulty: difficulty_for_depth(tier, config.max_tier),
                required_caps: caps,
                composition_depth: tier,
                gold_trace: Some(gold_trace),
                tool_calls: Vec::new(),
            });
        }
    }
    let set = TaskSet::from_tasks(tasks)?;
    stratified_split(&set, config.split_ratios, seed)
}

fn check_ratios(ratios: &[f64; 3], key: &str) -> Result<()> {
    if ratios.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::config(key, "ratios must be non-negative"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(key, format!("ratios sum to {total}, expected 1")));
    }
    Ok(())
}

/// Per-tier split sizes by the largest-remainder rule.
///
/// Tiers with fewer tasks than non-zero ratios go entirely to the
/// largest-ratio split.
fn split_counts(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let largest = (0..3).fold(0, |best, i| if ratios[i] > ratios[best] { i } else { best });
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    let mut counts = [0usize; 3];
    if n < nonzero {
        counts[largest] = n;
        return counts;
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    for i in 0..3 {
        // guard against 0.8 * 100 = 79.99999
        counts[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).filter(|i| ratios[*i] > 0.0).collect();
    order.sort_by(|a, b| {
        let fa = exact[*a] - counts[*a] as f64;
        let fb = exact[*b] - counts[*b] as f64;
        fb.total_cmp(&fa).then(a.cmp(b))
    });
    for i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[*i] += 1;
        left -= 1;
    }
    counts
}

/// Reassigns every task to train/val/test, tier by tier.
pub fn stratified_split(tasks: &TaskSet, ratios: [f64; 3], seed: u64) -> Result<TaskSet> {
    check_ratios(&ratios, "split_ratios")?;
    let root = SeedTree::new(seed).child("split");
    let position: BTreeMap<&str, usize> = tasks
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (t.id.as_str(), i))
        .collect();
    let buckets = bucketize(&tasks.tasks);
    let mut splits = Splits::default();
    for (tier, ids) in &buckets {
        let mut ids = ids.clone();
        ids.shuffle(&mut root.index(*tier as u64).rng());
        let counts = split_counts(ids.len(), &ratios);
        let mut it = ids.into_iter();
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            splits.get_mut(split).extend(it.by_ref().take(count));
        }
    }
    for split in Split::ALL {
        splits.get_mut(split).sort_by_key(|id| position[id.as_str()]);
    }
    Ok(TaskSet {
        tasks: tasks.tasks.clone(),
        buckets,
        splits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub dim: usize,
    pub max_tier: u32,
    /// Seed of the hashed bag-of-tokens description embedding.
    pub embed_seed: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            dim: DEFAULT_DIM,
            max_tier: DEFAULT_MAX_TIER,
            embed_seed: 0x5eed,
        }
    }
}

/// One flattened TaskCraft-style record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskcraftRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub task_description: String,
    pub difficulty: i64,
    pub trajectory: Vec<StepRecord>,
    pub tool_calls: Vec<ToolCallEntry>,
    pub final_output: Value,
}

/// A tool call entry is either a bare tool name or an object naming the tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ToolCallEntry {
    Name(String),
    Object {
        #[serde(alias = "tool")]
        name: String,
    },
}

impl ToolCallEntry {
    pub fn name(&self) -> &str {
        match self {
            ToolCallEntry::Name(n) | ToolCallEntry::Object { name: n } => n,
        }
    }
}

const REQUIRED_FIELDS: [&str; 5] = [
    "task_description",
    "difficulty",
    "trajectory",
    "tool_calls",
    "final_output",
];

/// Signed hashed bag-of-tokens projection, L2-normalised. Empty text maps to
/// the zero vector.
pub fn embed_description(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let root = SeedTree::new(seed).child("embed");
    let mut v = vec![0.0; dim];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = root.child(&token.to_lowercase()).seed();
        let slot = (h % dim as u64) as usize;
        let sign = if (h >> 63) == 1 { -1.0 } else { 1.0 };
        v[slot] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Capability demand implied by a record's tool calls: each call adds 0.25
/// on the slot its tool name hashes to, capped at 1.
pub fn demand_from_tool_calls(names: &[String], dim: usize, seed: u64) -> Vec<f64> {
    let root = SeedTree::new(seed).child("tool-demand");
    let mut caps = vec![0.0; dim];
    for name in names {
        let slot = (root.child(name).seed() % dim as u64) as usize;
        caps[slot] = f64::min(caps[slot] + 0.25, 1.0);
    }
    caps
}

pub fn record_to_task(record: TaskcraftRecord, line: usize, config: &IngestConfig) -> Result<Task> {
    if record.difficulty < 1 {
        return Err(Error::Schema {
            line,
            message: format!("difficulty must be >= 1, got {}", record.difficulty),
        });
    }
    if let Some(step) = record.trajectory.iter().position(|s| !s.is_well_formed()) {
        return Err(Error::Schema {
            line,
            message: format!("trajectory step {step}: tool_id must be present exactly for tool_call steps"),
        });
    }
    let depth = u32::try_from(record.difficulty).unwrap_or(u32::MAX);
    let tool_calls: Vec<String> = record.tool_calls.iter().map(|c| c.name().to_string()).collect();
    Ok(Task {
        id: record.id.unwrap_or_else(|| format!("tc-{line:05}")),
        features: embed_description(&record.task_description, config.dim, config.embed_seed),
        required_caps: demand_from_tool_calls(&tool_calls, config.dim, config.embed_seed),
        description: record.task_description,
        difficulty: difficulty_for_depth(depth, config.max_tier),
        composition_depth: depth,
        gold_output: record.final_output,
        gold_trace: Some(record.trajectory),
        tool_calls,
    })
}

pub fn task_to_record(task: &Task) -> TaskcraftRecord {
    TaskcraftRecord {
        id: Some(task.id.clone()),
        task_description: task.description.clone(),
        difficulty: task.composition_depth as i64,
        trajectory: task.gold_trace.clone().unwrap_or_default(),
        tool_calls: task.tool_calls.iter().cloned().map(ToolCallEntry::Name).collect(),
        final_output: task.gold_output.clone(),
    }
}

/// Parses TaskCraft-format JSONL. Blank lines are skipped; line numbers are 1-based.
pub fn parse_taskcraft<R: Read>(reader: R, config: &IngestConfig) -> Result<TaskSet> {
    if config.dim == 0 {
        return Err(Error::config("dim", "must be positive"));
    }
    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        if let Some(missing) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::Schema {
                line: line_no,
                message: format!("missing required field `{missing}`"),
            });
        }
        let record: TaskcraftRecord = serde_json::from_value(value).map_err(|e| Error::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        let task = record_to_task(record, line_no, config)?;
        if !seen.insert(task.id.clone()) {
            return Err(Error::Duplicate(task.id));
        }
        tasks.push(task);
    }
    TaskSet::from_tasks(tasks)
}

pub fn ingest_taskcraft(path: impl AsRef<Path>) -> Result<TaskSet> {
    ingest_taskcraft_with(path, &IngestConfig::default())
}

pub fn ingest_taskcraft_with(path: impl AsRef<Path>, config: &IngestConfig) -> Result<TaskSet> {
    parse_taskcraft(File::open(path)?, config)
}

/// Writes one record per line in task-set order.
pub fn export_taskcraft<W: Write>(set: &TaskSet, mut writer: W) -> Result<()> {
    for task in &set.tasks {
        serde_json::to_writer(&mut writer, &task_to_record(task))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
