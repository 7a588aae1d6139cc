//! Real-valued GA over agent parameters: Gaussian mutation, convex-blend
//! crossover, tournament selection and elitism.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agentcore::AgentParams;
use crate::exec::Execution;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub size: usize,
    pub generations: u32,
    /// Per-coordinate variance of the mutation noise.
    pub mutation_variance: f64,
    pub elite_count: usize,
    pub tournament_size: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            size: 16,
            generations: 30,
            mutation_variance: 0.05,
            elite_count: 2,
            tournament_size: 3,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(Error::config("ga.size", "population needs at least 2 members"));
        }
        if self.elite_count > self.size {
            return Err(Error::config("ga.elite_count", "cannot exceed the population size"));
        }
        if !(self.mutation_variance >= 0.0) {
            return Err(Error::config("ga.mutation_variance", "must be non-negative"));
        }
        if self.tournament_size == 0 {
            return Err(Error::config("ga.tournament_size", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub params: AgentParams,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<Member>,
    pub generation: u32,
    pub config: GaConfig,
}

impl Population {
    /// Seeds a population around `center`: member 0 is `center` itself, the
    /// rest are mutations of it. Every member is evaluated.
    pub fn around<R, F>(
        center: &AgentParams,
        config: GaConfig,
        fitness_fn: F,
        rng: &mut R,
        execution: Execution,
    ) -> Result<Self>
    where
        R: Rng,
        F: Fn(&AgentParams) -> f64 + Sync + Send,
    {
        config.validate()?;
        let mut params = vec![center.clone()];
        for _ in 1..config.size {
            params.push(mutate(center, config.mutation_variance, rng)?);
        }
        let scores = execution.map(&params, |p| fitness_fn(p));
        Ok(Population {
            members: params
                .into_iter()
                .zip(scores)
                .map(|(params, f)| Member {
                    params,
                    fitness: Some(f),
                })
                .collect(),
            generation: 0,
            config,
        })
    }

    pub fn best(&self) -> Option<&Member> {
        ranked(&self.members).into_iter().next().map(|i| &self.members[i])
    }

    pub fn best_fitness(&self) -> f64 {
        self.best().and_then(|m| m.fitness).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Member indices by descending fitness, ties by index.
fn ranked(members: &[Member]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|a, b| {
        let fa = members[*a].fitness.unwrap_or(f64::NEG_INFINITY);
        let fb = members[*b].fitness.unwrap_or(f64::NEG_INFINITY);
        fb.total_cmp(&fa).then(a.cmp(b))
    });
    idx
}

/// `theta + delta`, `delta ~ N(0, v I)` over weights and bias (bias drawn last).
pub fn mutate<R: Rng>(params: &AgentParams, variance: f64, rng: &mut R) -> Result<AgentParams> {
    if !(variance >= 0.0) {
        return Err(Error::config("ga.mutation_variance", "must be non-negative"));
    }
    if variance == 0.0 {
        return Ok(params.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::config("ga.mutation_variance", e.to_string()))?;
    Ok(AgentParams::from_vec(
        params.to_vec().into_iter().map(|v| v + normal.sample(rng)).collect(),
    ))
}

/// `lambda * p1 + (1 - lambda) * p2`, coordinatewise.
pub fn crossover(p1: &AgentParams, p2: &AgentParams, lambda: f64) -> Result<AgentParams> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("ga.crossover_lambda", "must lie in [0, 1]"));
    }
    if p1.dim() != p2.dim() {
        return Err(Error::contract(format!(
            "crossover parents have dimensions {} and {}",
            p1.dim(),
            p2.dim()
        )));
    }
    // endpoints are returned verbatim so lambda = 0 / 1 are exact
    if lambda == 1.0 {
        return Ok(p1.clone());
    }
    if lambda == 0.0 {
        return Ok(p2.clone());
    }
    Ok(AgentParams::from_vec(
        p1.to_vec()
            .iter()
            .zip(p2.to_vec())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect(),
    ))
}

fn tournament<R: Rng>(members: &[Member], size: usize, rng: &mut R) -> usize {
    let mut best = rng.random_range(0..members.len());
    for _ in 1..size {
        let c = rng.random_range(0..members.len());
        let fc = members[c].fitness.unwrap_or(f64::NEG_INFINITY);
        let fb = members[best].fitness.unwrap_or(f64::NEG_INFINITY);
        if fc > fb || (fc == fb && c < best) {
            best = c;
        }
    }
    best
}

/// One generation: elites carried over unchanged, the remainder bred by two
/// tournaments, a uniform-lambda crossover and a mutation. All draws happen
/// sequentially on `rng` before the children are evaluated (possibly in
/// parallel).
pub fn evolve_generation<R, F>(
    population: &Population,
    fitness_fn: F,
    rng: &mut R,
    execution: Execution,
) -> Result<Population>
where
    R: Rng,
    F: Fn(&AgentParams) -> f64 + Sync + Send,
{
    let config = &population.config;
    config.validate()?;
    if population.members.len() != config.size {
        return Err(Error::contract(format!(
            "population has {} members, config says {}",
            population.members.len(),
            config.size
        )));
    }
    if population.members.iter().any(|m| m.fitness.is_none()) {
        return Err(Error::contract("every member needs a fitness before selection"));
    }
    let order = ranked(&population.members);
    let mut next: Vec<Member> = order[..config.elite_count]
        .iter()
        .map(|i| population.members[*i].clone())
        .collect();
    let mut children = Vec::with_capacity(config.size - config.elite_count);
    for _ in config.elite_count..config.size {
        let a = tournament(&population.members, config.tournament_size, rng);
        let b = tournament(&population.members, config.tournament_size, rng);
        let lambda: f64 = rng.random();
        let child = crossover(&population.members[a].params, &population.members[b].params, lambda)?;
        children.push(mutate(&child, config.mutation_variance, rng)?);
    }
    let scores = execution.map(&children, |p| fitness_fn(p));
    next.extend(children.into_iter().zip(scores).map(|(params, f)| Member {
        params,
        fitness: Some(f),
    }));
    Ok(Population {
        members: next,
        generation: population.generation + 1,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn p(v: &[f64]) -> AgentParams {
        AgentParams::from_vec(v.to_vec())
    }

    #[test]
    fn crossover_examples() {
        let a = p(&[2.0, 0.0]);
        let b = p(&[0.0, 2.0]);
        assert_eq!(crossover(&a, &b, 1.0).unwrap(), a);
        assert_eq!(crossover(&a, &b, 0.0).unwrap(), b);
        assert_eq!(crossover(&a, &b, 0.5).unwrap(), p(&[1.0, 1.0]));
        assert!(matches!(crossover(&a, &b, 1.5), Err(Error::Config { .. })));
        assert!(matches!(
            crossover(&a, &p(&[1.0, 1.0, 1.0]), 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mutation_examples() {
        let theta = p(&[0.5, -1.0, 2.0]);
        let mut rng = SeedTree::new(1).rng();
        assert_eq!(mutate(&theta, 0.0, &mut rng).unwrap(), theta);
        assert!(matches!(mutate(&theta, -0.1, &mut rng), Err(Error::Config { .. })));
        let a = mutate(&theta, 0.3, &mut SeedTree::new(5).rng()).unwrap();
        let b = mutate(&theta, 0.3, &mut SeedTree::new(5).rng()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, theta);
    }

    #[test]
    fn full_elitism_keeps_membership() {
        let cfg = GaConfig {
            size: 4,
            elite_count: 4,
            ..GaConfig::default()
        };
        let f = |x: &AgentParams| -x.bias.abs();
        let pop = Population::around(
            &p(&[0.0, 1.0]),
            cfg,
            f,
            &mut SeedTree::new(2).rng(),
            Execution::Sequential,
        )
        .unwrap();
        let next = evolve_generation(&pop, f, &mut SeedTree::new(3).rng(), Execution::Sequential).unwrap();
        let mut before: Vec<String> = pop.members.iter().map(|m| format!("{:?}", m.params)).collect();
        let mut after: Vec<String> = next.members.iter().map(|m| format!("{:?}", m.params)).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
        assert_eq!(next.generation, 1);
    }

    #[test]
    fn missing_fitness_is_a_contract_violation() {
        let cfg = GaConfig {
            size: 2,
            elite_count: 1,
            ..GaConfig::default()
        };
        let pop = Population {
            members: vec![
                Member {
                    params: p(&[0.0]),
                    fitness: Some(1.0),
                },
                Member {
                    params: p(&[1.0]),
                    fitness: None,
                },
            ],
            generation: 0,
            config: cfg,
        };
        assert!(matches!(
            evolve_generation(&pop, |_| 0.0, &mut SeedTree::new(1).rng(), Execution::Sequential),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn parallel_and_sequential_generations_agree() {
        let f = |x: &AgentParams| -x.to_vec().iter().map(|v| (v - 1.0).powi(2)).sum::<f64>();
        let cfg = GaConfig::default();
        let run = |exec| {
            let mut rng = SeedTree::new(8).rng();
            let mut pop = Population::around(&p(&[0.0; 5]), cfg.clone(), f, &mut rng, exec).unwrap();
            for _ in 0..5 {
                pop = evolve_generation(&pop, f, &mut rng, exec).unwrap();
            }
            pop
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn crossover_is_convex(
                pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..10),
                lambda in 0.0f64..=1.0,
            ) {
                let a: Vec<f64> = pairs.iter().map(|x| x.0).collect();
                let b: Vec<f64> = pairs.iter().map(|x| x.1).collect();
                let c = crossover(&p(&a), &p(&b), lambda).unwrap().to_vec();
                for i in 0..a.len() {
                    let lo = a[i].min(b[i]);
                    let hi = a[i].max(b[i]);
                    prop_assert!(c[i] >= lo - 1e-12 && c[i] <= hi + 1e-12);
                }
            }
        }
    }
}
