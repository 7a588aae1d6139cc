//! Versioned checkpoints of a run in canonical JSON (sorted keys).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::RunConfig;
use crate::lifecycle::LifecycleRun;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "evoagent-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub state: LifecycleRun,
}

impl Checkpoint {
    pub fn new(config: &RunConfig, state: &LifecycleRun) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            state: state.clone(),
        }
    }
}

/// Rebuilds every object with its keys in sorted order.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, canonicalize(v)))
                    .collect::<Map<String, Value>>(),
            )
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&canonicalize(serde_json::to_value(value)?))?)
}

/// Writes to a sibling temp file first so a crash never leaves a torn
/// checkpoint behind.
pub fn checkpoint_save(path: impl AsRef<Path>, config: &RunConfig, state: &LifecycleRun) -> Result<()> {
    let path = path.as_ref();
    let text = to_canonical_json(&Checkpoint::new(config, state))?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_str(&text)
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let value: Value = serde_json::from_str(text)?;
    let format = value.get("format").and_then(Value::as_str).unwrap_or_default();
    if format != CHECKPOINT_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("not a checkpoint (format `{format}`)"),
        });
    }
    let version = value.get("version").and_then(Value::as_u64).unwrap_or(0);
    if version != CHECKPOINT_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            format: CHECKPOINT_FORMAT.to_string(),
            found: version.min(u32::MAX as u64) as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut cp: Checkpoint = serde_json::from_value(value)?;
    cp.state = cp.state.with_execution(super::execution_for(&cp.config));
    Ok(cp)
}
