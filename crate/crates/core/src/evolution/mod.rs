//! The three evolution engines and the fitness they optimise.
//!
//! Every engine takes a clone's parameters and returns fresh ones; inputs are
//! never mutated, so the clone can always be compared against its original.

use serde::{Deserialize, Serialize};

pub mod curriculum;
pub mod fitness;
pub mod genetic;
pub mod policy_gradient;
pub mod reward_model;
pub mod training;

pub use curriculum::{select_bucket, update_bucket_stats, ArmStats, CurriculumState};
pub use fitness::{fitness, fitness_with};
pub use genetic::{crossover, evolve_generation, mutate, GaConfig, Member, Population};
pub use policy_gradient::{policy_gradient_step, PgConfig};
pub use reward_model::{fit_reward_model, score_trace, FitConfig, RewardModel};
pub use training::{cl_train, ga_train, grid_cell, rl_train, TrainContext, TrainOutcome, TrainingRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvolutionMode {
    #[serde(rename = "CL", alias = "cl")]
    Cl,
    #[serde(rename = "RL", alias = "rl")]
    Rl,
    #[serde(rename = "GA", alias = "ga")]
    Ga,
}

impl EvolutionMode {
    pub const ALL: [EvolutionMode; 3] = [EvolutionMode::Cl, EvolutionMode::Rl, EvolutionMode::Ga];

    pub fn as_str(self) -> &'static str {
        match self {
            EvolutionMode::Cl => "CL",
            EvolutionMode::Rl => "RL",
            EvolutionMode::Ga => "GA",
        }
    }
}

impl std::fmt::Display for EvolutionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EvolutionMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cl" => Ok(EvolutionMode::Cl),
            "rl" => Ok(EvolutionMode::Rl),
            "ga" => Ok(EvolutionMode::Ga),
            other => Err(crate::Error::config(
                "mode",
                format!("unknown evolution mode `{other}`"),
            )),
        }
    }
}
