//! Validation fitness: mean closed-form expected reward over a task list.

use crate::agentcore::{closed_form_reward, AgentParams, Substrate};
use crate::exec::{self, Execution};
use crate::taskenv::Task;
use crate::toolforge::ToolRegistry;
use crate::{Error, Result};

pub fn fitness(
    params: &AgentParams,
    validation: &[Task],
    registry: &ToolRegistry,
    substrate: &Substrate,
) -> Result<f64> {
    fitness_with(params, validation, registry, substrate, Execution::default())
}

pub fn fitness_with(
    params: &AgentParams,
    validation: &[Task],
    registry: &ToolRegistry,
    substrate: &Substrate,
    execution: Execution,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::config(
            "validation",
            "fitness needs a non-empty validation split",
        ));
    }
    let per_task = execution
        .map(validation, |task| closed_form_reward(params, task, registry, substrate))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(exec::mean(&per_task))
}
