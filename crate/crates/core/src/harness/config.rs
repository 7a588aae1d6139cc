//! Run configuration: defaults, a TOML or JSON file, then dotted
//! `key=value` overrides. Unknown keys are rejected with their full path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::lifecycle::LifecycleConfig;
use crate::taskenv::{generate_tasks, ingest_taskcraft_with, stratified_split, GeneratorConfig, IngestConfig, TaskSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Task set to use instead of generating one: a TaskCraft `.jsonl` file
    /// or a task-set `.json` written by `gen-tasks`.
    pub tasks_path: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub ingest: IngestConfig,
    pub lifecycle: LifecycleConfig,
    pub output_dir: PathBuf,
    /// Fan validation and population evaluation out over threads.
    pub parallel: bool,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tasks_path: None,
            generator: GeneratorConfig::default(),
            ingest: IngestConfig::default(),
            lifecycle: LifecycleConfig::default(),
            output_dir: PathBuf::from("runs"),
            parallel: true,
            checkpoint_every: 0,
        }
    }
}

fn prefixed(err: Error, prefix: &str) -> Error {
    match err {
        Error::Config { key, message } if !key.starts_with(prefix) => Error::Config {
            key: format!("{prefix}{key}"),
            message,
        },
        other => other,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate().map_err(|e| prefixed(e, "generator."))?;
        if self.ingest.dim == 0 {
            return Err(Error::config("ingest.dim", "must be positive"));
        }
        if self.ingest.max_tier == 0 {
            return Err(Error::config("ingest.max_tier", "must be positive"));
        }
        self.lifecycle.validate().map_err(|e| prefixed(e, "lifecycle."))
    }

    /// Defaults, then `file` (if any), then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)?;
            let layer: Value = match path.extension().and_then(|e| e.to_str()) {
                Some("json") => serde_json::from_str(&text)?,
                _ => toml::from_str(&text).map_err(|e| Error::Parse {
                    line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
                    message: e.message().to_string(),
                })?,
            };
            merge(&mut value, layer, "")?;
        }
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: RunConfig = serde_json::from_value(value).map_err(|e| Error::config("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Generated or loaded tasks, split with this config's ratios.
    pub fn load_tasks(&self) -> Result<TaskSet> {
        match &self.tasks_path {
            None => generate_tasks(&self.generator, self.seed),
            Some(path) if path.extension().is_some_and(|e| e == "jsonl") => {
                let set = ingest_taskcraft_with(path, &self.ingest)?;
                stratified_split(&set, self.generator.split_ratios, self.seed)
            }
            Some(path) => {
                let set: TaskSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                set.validate()?;
                Ok(set)
            }
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Deep-merges `layer` into `base`, refusing keys `base` does not have.
fn merge(base: &mut Value, layer: Value, path: &str) -> Result<()> {
    match (base, layer) {
        (Value::Object(base), Value::Object(layer)) => {
            for (k, v) in layer {
                let key = join(path, &k);
                let slot = base
                    .get_mut(&k)
                    .ok_or_else(|| Error::config(key.clone(), "unknown configuration key"))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parses a raw override value: JSON literals first, bare strings otherwise.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override.
pub fn apply_override(config: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::config(item, "override key is empty"));
    }
    let mut slot = &mut *config;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map
                .get_mut(part)
                .ok_or_else(|| Error::config(key, "unknown configuration key"))?,
            _ => return Err(Error::config(key, "not a configuration section")),
        };
    }
    *slot = match (&*slot, parse_scalar(raw.trim())) {
        (Value::Object(_), v) if !v.is_object() => {
            return Err(Error::config(key, "is a section; set one of its keys instead"))
        }
        (_, v) => v,
    };
    Ok(())
}

/// The effective configuration as canonical TOML.
pub fn to_toml(config: &RunConfig) -> Result<String> {
    let mut value = serde_json::to_value(config)?;
    strip_nulls(&mut value);
    toml::to_string_pretty(&value).map_err(|e| Error::config("config", e.to_string()))
}

fn strip_nulls(v: &mut Value) {
    if let Value::Object(map) = v {
        let keep: Map<String, Value> = std::mem::take(map).into_iter().filter(|(_, v)| !v.is_null()).collect();
        *map = keep;
        map.values_mut().for_each(strip_nulls);
    }
}
