//! Linear trace reward model fitted on preference pairs (Bradley-Terry).
//!
//! `P(a preferred over b) = sigmoid(R(a) - R(b))`, `R(t) = phi . f(t) + bias`.
//! The bias cancels in every comparison, so fitting leaves it at its start.

use serde::{Deserialize, Serialize};

use crate::agentcore::{sigmoid, Trace};
use crate::{Error, Result};

pub const TRACE_FEATURES: usize = 5;

/// Trace featurizer: `[coverage, success, cost, step count, difficulty]`.
pub fn trace_features(trace: &Trace) -> [f64; TRACE_FEATURES] {
    [
        trace.coverage,
        if trace.success { 1.0 } else { 0.0 },
        trace.cost_incurred,
        trace.steps.len() as f64,
        trace.difficulty as f64,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub phi_weights: Vec<f64>,
    pub phi_bias: f64,
}

impl RewardModel {
    pub fn zeros() -> Self {
        RewardModel {
            phi_weights: vec![0.0; TRACE_FEATURES],
            phi_bias: 0.0,
        }
    }

    /// Prior before any preferences are seen: reward is the success flag.
    pub fn success_prior() -> Self {
        let mut m = Self::zeros();
        m.phi_weights[1] = 1.0;
        m
    }

    pub fn score_features(&self, features: &[f64]) -> f64 {
        self.phi_weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.phi_bias
    }

    pub fn scaled(&self, c: f64) -> Self {
        RewardModel {
            phi_weights: self.phi_weights.iter().map(|w| w * c).collect(),
            phi_bias: self.phi_bias * c,
        }
    }
}

pub fn score_trace(model: &RewardModel, trace: &Trace) -> f64 {
    model.score_features(&trace_features(trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 200,
            learning_rate: 0.1,
            l2: 1e-3,
        }
    }
}

/// Gradient of `log sigmoid(R(preferred) - R(other))` with respect to the
/// weights. Identical traces contribute exactly zero.
pub fn preference_gradient(model: &RewardModel, preferred: &Trace, other: &Trace) -> [f64; TRACE_FEATURES] {
    let fp = trace_features(preferred);
    let fo = trace_features(other);
    let mut diff = [0.0; TRACE_FEATURES];
    for i in 0..TRACE_FEATURES {
        diff[i] = fp[i] - fo[i];
    }
    let margin = model.score_features(&diff) - model.phi_bias;
    let scale = 1.0 - sigmoid(margin);
    diff.map(|d| scale * d)
}

/// Gradient ascent on the mean pairwise log-likelihood (minus an L2 term),
/// starting from `init`.
pub fn fit_reward_model_from(init: &RewardModel, pairs: &[(Trace, Trace)], config: &FitConfig) -> Result<RewardModel> {
    if pairs.is_empty() {
        return Err(Error::config("rl.pairs", "fitting needs at least one preference pair"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::config("rl.fit.learning_rate", "must be positive"));
    }
    let mut model = init.clone();
    let n = pairs.len() as f64;
    for _ in 0..config.iterations {
        let mut grad = [0.0; TRACE_FEATURES];
        for (p, o) in pairs {
            let g = preference_gradient(&model, p, o);
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi / n;
            }
        }
        for (w, gi) in model.phi_weights.iter_mut().zip(grad) {
            *w += config.learning_rate * (gi - config.l2 * *w);
        }
    }
    Ok(model)
}

pub fn fit_reward_model(pairs: &[(Trace, Trace)], config: &FitConfig) -> Result<RewardModel> {
    fit_reward_model_from(&RewardModel::zeros(), pairs, config)
}

/// Fraction of pairs the model ranks strictly in the preferred order.
pub fn ranking_accuracy(model: &RewardModel, pairs: &[(Trace, Trace)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let ok = pairs
        .iter()
        .filter(|(p, o)| score_trace(model, p) > score_trace(model, o))
        .count();
    ok as f64 / pairs.len() as f64
}
