//! Rolling-horizon planning.
//!
//! An individual is an `H`-step action sequence flattened row-wise into a
//! vector of length `H · action_dim`. Its fitness is the discounted return of
//! replaying it from the current snapshot, optionally bootstrapped with the
//! value network at the last reached state:
//!
//! ```text
//! R_L = 0                 if s_L is terminal or no value prior
//!       V(s_L)            otherwise
//! R_t = r_t + γ R_{t+1}   for t = L-1 … 0,   fitness = R_0
//! ```
//!
//! [`plan`] seeds the first CMA-ES generation (from the policy prior or
//! uniformly, with the previous optimum's tail in slot 0), evolves for `NG`
//! generations and returns the best individual ever evaluated. Population
//! evaluation fans out through [`crate::parallel`]; each worker replays on its
//! own clone of the environment.

use rand::Rng;

use crate::cmaes::{default_population_size, CmaConfig, CmaState};
use crate::env::{EnvSpec, Environment, Snapshot};
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, ValueNet};
use crate::parallel::{self, Execution};
use crate::rng::{fork, PlanRng};

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub horizon: usize,
    pub generations: usize,
    /// `None` means `4 + ⌊3 ln D⌋` with `D = H · action_dim`.
    pub population: Option<usize>,
    pub discount: f64,
    pub use_policy_prior: bool,
    pub use_value_prior: bool,
    pub steps_per_cycle: usize,
    /// Initial CMA-ES step size as a fraction of the action half-width.
    pub step_size_fraction: f64,
    pub execution: Execution,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            generations: 5,
            population: None,
            discount: 0.99,
            use_policy_prior: true,
            use_value_prior: true,
            steps_per_cycle: 1,
            step_size_fraction: 0.3,
            execution: Execution::default(),
        }
    }
}

impl PlanConfig {
    /// Plain RHEA: no priors, `r_f ≡ 0`.
    pub fn plain(horizon: usize, generations: usize) -> Self {
        Self {
            horizon,
            generations,
            use_policy_prior: false,
            use_value_prior: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.generations == 0 || self.steps_per_cycle == 0 {
            return Err(Error::InvalidConfig(
                "horizon, generations and steps per cycle must be positive".into(),
            ));
        }
        if self.steps_per_cycle > self.horizon {
            return Err(Error::InvalidConfig(format!(
                "steps per cycle {} exceeds horizon {}",
                self.steps_per_cycle, self.horizon
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            )));
        }
        if self.population == Some(0) {
            return Err(Error::InvalidConfig("population must be positive".into()));
        }
        if self.step_size_fraction.is_nan() || self.step_size_fraction <= 0.0 {
            return Err(Error::InvalidConfig("step size fraction must be positive".into()));
        }
        Ok(())
    }

    pub fn dimension(&self, action_dim: usize) -> usize {
        self.horizon * action_dim
    }

    pub fn population_size(&self, action_dim: usize) -> usize {
        self.population
            .unwrap_or_else(|| default_population_size(self.dimension(action_dim)))
    }

    /// Fitness evaluations spent per call to [`plan`].
    pub fn evaluations_per_plan(&self, action_dim: usize) -> usize {
        self.population_size(action_dim) * self.generations
    }
}

/// Networks available to the planner. A missing value network means `R_L = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Priors<'a> {
    pub policy: Option<&'a GaussianPolicy>,
    pub value: Option<&'a ValueNet>,
}

impl<'a> Priors<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(policy: Option<&'a GaussianPolicy>, value: Option<&'a ValueNet>) -> Self {
        Self { policy, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub rewards: Vec<f64>,
    /// Steps actually taken (`L`).
    pub length: usize,
    pub terminal: bool,
    /// `R_L`.
    pub bootstrap: f64,
}

/// `R_t = r_t + γ R_{t+1}` backwards from `R_L = bootstrap`. Returns
/// `R_0 … R_{L-1}`.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + discount * acc;
        out[t] = acc;
    }
    out
}

fn decode<'g>(genes: &'g [f64], spec: &EnvSpec) -> impl Iterator<Item = &'g [f64]> {
    genes.chunks_exact(spec.action_dim)
}

/// Replays `genes` from `snapshot` on `scratch` and scores the sequence.
pub fn evaluate_individual<E: Environment>(
    scratch: &mut E,
    snapshot: &Snapshot,
    genes: &[f64],
    discount: f64,
    value: Option<&ValueNet>,
) -> Result<Evaluation> {
    scratch.restore(snapshot)?;
    let spec = scratch.spec().clone();
    if !genes.len().is_multiple_of(spec.action_dim) || genes.is_empty() {
        return Err(Error::ShapeMismatch {
            what: "individual length (multiple of action_dim)",
            expected: spec.action_dim,
            found: genes.len(),
        });
    }
    let mut rewards = Vec::with_capacity(genes.len() / spec.action_dim);
    let mut terminal = scratch.is_terminal();
    if !terminal {
        for action in decode(genes, &spec) {
            let step = scratch.step(action)?;
            if step.reward.is_nan() {
                return Err(Error::NonFinite("reward"));
            }
            rewards.push(step.reward);
            if step.terminal {
                terminal = true;
                break;
            }
        }
    }
    let bootstrap = match value {
        Some(v) if !terminal => v.forward(&scratch.observe())?,
        _ => 0.0,
    };
    let fitness = rewards
        .iter()
        .rev()
        .fold(bootstrap, |acc, r| r + discount * acc);
    if fitness.is_nan() {
        return Err(Error::NonFinite("fitness"));
    }
    Ok(Evaluation {
        fitness,
        length: rewards.len(),
        rewards,
        terminal,
        bootstrap,
    })
}

fn uniform_action<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Vec<f64> {
    spec.action_low
        .iter()
        .zip(&spec.action_high)
        .map(|(lo, hi)| rng.random_range(*lo..=*hi))
        .collect()
}

/// Builds the first generation.
///
/// With a policy every individual is a rollout of the stochastic policy from
/// the snapshot; without one genes are uniform in the action box. If
/// `prev_tail` is given, individual 0 starts with it and is completed the same
/// way as the others.
#[allow(clippy::too_many_arguments)]
pub fn init_population<E: Environment>(
    env: &E,
    snapshot: &Snapshot,
    policy: Option<&GaussianPolicy>,
    prev_tail: Option<&[Vec<f64>]>,
    population: usize,
    horizon: usize,
    rng: &mut PlanRng,
    execution: Execution,
) -> Result<Vec<Vec<f64>>> {
    let spec = env.spec().clone();
    if let Some(p) = policy {
        if p.state_dim() != spec.state_dim || p.action_dim() != spec.action_dim {
            return Err(Error::ShapeMismatch {
                what: "policy dimensions (state_dim + action_dim)",
                expected: spec.state_dim + spec.action_dim,
                found: p.state_dim() + p.action_dim(),
            });
        }
    }
    let streams: Vec<PlanRng> = (0..population).map(|_| fork(rng)).collect();
    let build = |i: usize, stream: &PlanRng| -> Result<Vec<f64>> {
        let mut rng = stream.clone();
        let prefix: &[Vec<f64>] = match prev_tail {
            Some(tail) if i == 0 => &tail[..tail.len().min(horizon)],
            _ => &[],
        };
        let mut genes = Vec::with_capacity(horizon * spec.action_dim);
        for a in prefix {
            if a.len() != spec.action_dim {
                return Err(Error::ShapeMismatch {
                    what: "previous tail action",
                    expected: spec.action_dim,
                    found: a.len(),
                });
            }
            genes.extend_from_slice(a);
        }
        match policy {
            Some(p) => {
                let mut sim = env.clone();
                sim.restore(snapshot)?;
                for a in prefix {
                    if sim.is_terminal() {
                        break;
                    }
                    sim.step(a)?;
                }
                let mut obs = sim.observe();
                for _ in prefix.len()..horizon {
                    let a = spec.clip(&p.sample(&obs, &mut rng)?);
                    if !sim.is_terminal() {
                        obs = sim.step(&a)?.next_state;
                    }
                    genes.extend_from_slice(&a);
                }
            }
            None => {
                for _ in prefix.len()..horizon {
                    genes.extend(uniform_action(&spec, &mut rng));
                }
            }
        }
        Ok(genes)
    };
    parallel::map(execution, &streams, build).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// `s*_0 … s*_L`.
    pub states: Vec<Vec<f64>>,
    /// `a*_0 … a*_{L-1}`, clipped to the action box.
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// `R*_0 … R*_{L-1}`.
    pub returns: Vec<f64>,
    pub bootstrap: f64,
    pub fitness: f64,
    pub length: usize,
    pub terminal: bool,
    /// The winning individual as evaluated (unclipped, all `H` steps).
    pub genes: Vec<f64>,
    /// Best fitness seen after each generation.
    pub best_so_far: Vec<f64>,
    pub evaluations: usize,
}

impl PlanResult {
    /// Actions `T … L-1`, used to warm-start the next cycle.
    pub fn tail(&self, executed: usize) -> Vec<Vec<f64>> {
        self.actions.iter().skip(executed).cloned().collect()
    }
}

/// Runs one CMA-ES search from the environment's current state.
pub fn plan<E: Environment>(
    env: &E,
    config: &PlanConfig,
    priors: Priors<'_>,
    prev_tail: Option<&[Vec<f64>]>,
    rng: &mut PlanRng,
) -> Result<PlanResult> {
    config.validate()?;
    let spec = env.spec().clone();
    if let Some(v) = priors.value {
        if v.state_dim() != spec.state_dim {
            return Err(Error::ShapeMismatch {
                what: "value network input",
                expected: spec.state_dim,
                found: v.state_dim(),
            });
        }
    }
    let snapshot = env.snapshot();
    let horizon = config.horizon;
    let dim = config.dimension(spec.action_dim);
    let population = config.population_size(spec.action_dim);
    let half = spec.half_width();
    let sigma0 = config.step_size_fraction * half.iter().sum::<f64>() / half.len() as f64;
    let cma_config = CmaConfig::new(dim, sigma0, config.generations).with_population(population);

    let seeds = init_population(
        env,
        &snapshot,
        priors.policy,
        prev_tail,
        population,
        horizon,
        rng,
        config.execution,
    )?;
    let centroid: Vec<f64> = (0..dim)
        .map(|d| seeds.iter().map(|x| x[d]).sum::<f64>() / seeds.len() as f64)
        .collect();
    let mut cma = CmaState::new(cma_config, &centroid)?;
    let mut individuals = cma.seed_generation(seeds)?;

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut best_so_far = Vec::with_capacity(config.generations);
    let mut evaluations = 0;
    for generation in 0..config.generations {
        if generation > 0 {
            individuals = cma.sample(population, rng);
        }
        let scored: Vec<Result<f64>> = parallel::map(config.execution, &individuals, |_, genes| {
            let mut scratch = env.clone();
            evaluate_individual(&mut scratch, &snapshot, genes, config.discount, priors.value)
                .map(|e| e.fitness)
        });
        let mut evaluated = Vec::with_capacity(population);
        for (genes, fitness) in individuals.drain(..).zip(scored) {
            let fitness = fitness?;
            if best.as_ref().is_none_or(|(_, f)| fitness > *f) {
                best = Some((genes.clone(), fitness));
            }
            evaluated.push((genes, fitness));
        }
        evaluations += evaluated.len();
        best_so_far.push(best.as_ref().map(|b| b.1).unwrap_or(f64::NEG_INFINITY));
        if generation + 1 < config.generations {
            cma.update(&evaluated)?;
        }
    }

    let (genes, _) = best.ok_or_else(|| Error::InvalidConfig("empty population".into()))?;
    rollout(env, &snapshot, genes, config.discount, priors.value, best_so_far, evaluations)
}

fn rollout<E: Environment>(
    env: &E,
    snapshot: &Snapshot,
    genes: Vec<f64>,
    discount: f64,
    value: Option<&ValueNet>,
    best_so_far: Vec<f64>,
    evaluations: usize,
) -> Result<PlanResult> {
    let mut sim = env.clone();
    sim.restore(snapshot)?;
    let spec = sim.spec().clone();
    let mut states = vec![sim.observe()];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut terminal = sim.is_terminal();
    if !terminal {
        for a in decode(&genes, &spec) {
            let a = spec.clip(a);
            let step = sim.step(&a)?;
            states.push(step.next_state);
            actions.push(a);
            rewards.push(step.reward);
            if step.terminal {
                terminal = true;
                break;
            }
        }
    }
    let bootstrap = match value {
        Some(v) if !terminal => v.forward(states.last().expect("initial state"))?,
        _ => 0.0,
    };
    let returns = discounted_returns(&rewards, bootstrap, discount);
    let fitness = returns.first().copied().unwrap_or(bootstrap);
    Ok(PlanResult {
        length: rewards.len(),
        states,
        actions,
        rewards,
        returns,
        bootstrap,
        fitness,
        terminal,
        genes,
        best_so_far,
        evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeOutcome {
    /// Undiscounted sum of rewards.
    pub total_return: f64,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub steps: usize,
    /// Fitness evaluations spent by the planner.
    pub evaluations: usize,
    pub plans: usize,
}

/// Plays one episode: plan, execute the first `T` actions, shift, repeat.
///
/// `env` must be freshly reset (or positioned where play should start).
/// `max_steps` bounds the number of real steps in addition to the
/// environment's own limit.
pub fn run_episode<E: Environment>(
    env: &mut E,
    config: &PlanConfig,
    priors: Priors<'_>,
    rng: &mut PlanRng,
    max_steps: Option<usize>,
) -> Result<EpisodeOutcome> {
    config.validate()?;
    let mut out = EpisodeOutcome {
        states: vec![env.observe()],
        ..Default::default()
    };
    let mut tail: Option<Vec<Vec<f64>>> = None;
    let limit = max_steps.unwrap_or(usize::MAX);
    while !env.is_terminal() && out.steps < limit {
        let result = plan(env, config, priors, tail.as_deref(), rng)?;
        out.evaluations += result.evaluations;
        out.plans += 1;
        let take = config.steps_per_cycle.min(result.actions.len()).max(1);
        let mut executed = 0;
        for a in result.actions.iter().take(take) {
            let step = env.step(a)?;
            out.total_return += step.reward;
            out.rewards.push(step.reward);
            out.actions.push(a.clone());
            out.states.push(step.next_state);
            out.steps += 1;
            executed += 1;
            if step.terminal || out.steps >= limit {
                break;
            }
        }
        if executed == 0 {
            break;
        }
        tail = Some(result.tail(executed));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{PointMass, TaskId, Task};
    use crate::nn::Mlp;
    use crate::rng::seeded;
    use nalgebra::DVector;

    #[test]
    fn return_recursion_hand_values() {
        let r = discounted_returns(&[1.0, 1.0, 1.0], 0.0, 0.99);
        assert!((r[0] - 2.9701).abs() < 1e-12);
        // closed form: (1 - γ³) / (1 - γ)
        assert!((r[0] - (1.0 - 0.99f64.powi(3)) / 0.01).abs() < 1e-12);
        assert!((r[2] - 1.0).abs() < 1e-15);
        let c = 3.0;
        let r = discounted_returns(&[0.0; 4], c, 0.9);
        assert!((r[0] - 0.9f64.powi(4) * c).abs() < 1e-12);
    }

    #[test]
    fn evaluation_bootstraps_only_when_alive() {
        let mut env = PointMass::new();
        env.reset(0);
        let snap = env.snapshot();
        let mut net = Mlp::zeros(4, &[2], 1);
        net.layers_mut()[1].bias[0] = 5.0;
        let value = ValueNet::from_mlp(net).unwrap();
        let genes = vec![0.0; 6];
        let e = evaluate_individual(&mut env.clone(), &snap, &genes, 0.9, Some(&value)).unwrap();
        assert_eq!(e.length, 3);
        assert!((e.fitness - 0.9f64.powi(3) * 5.0).abs() < 1e-12);
        let e = evaluate_individual(&mut env.clone(), &snap, &genes, 0.9, None).unwrap();
        assert_eq!(e.fitness, 0.0);
    }

    #[test]
    fn uniform_population_respects_bounds() {
        let mut env = Task::new(TaskId::PointMass);
        env.reset(0);
        let snap = env.snapshot();
        let pop = init_population(&env, &snap, None, None, 250, 20, &mut seeded(3), Execution::Sequential).unwrap();
        let genes: Vec<f64> = pop.iter().flatten().copied().collect();
        assert_eq!(genes.len(), 250 * 20 * 2);
        assert!(genes.iter().all(|g| (-1.0..=1.0).contains(g)));
        let mean = genes.iter().sum::<f64>() / genes.len() as f64;
        assert!(mean.abs() < 0.05);
    }

    #[test]
    fn degenerate_policy_gives_identical_individuals() {
        let mut env = Task::new(TaskId::TrapSwimmer);
        env.reset(0);
        let snap = env.snapshot();
        let mut policy = GaussianPolicy::new(4, &[8], 1, &mut seeded(1));
        policy.log_std = DVector::from_element(1, -800.0);
        let pop = init_population(&env, &snap, Some(&policy), None, 6, 10, &mut seeded(2), Execution::Parallel).unwrap();
        assert!(pop.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn previous_tail_seeds_first_individual() {
        let mut env = Task::new(TaskId::PointMass);
        env.reset(0);
        let snap = env.snapshot();
        let tail: Vec<Vec<f64>> = (0..19).map(|t| vec![t as f64 / 20.0, -0.5]).collect();
        let pop = init_population(&env, &snap, None, Some(&tail), 4, 20, &mut seeded(9), Execution::Sequential).unwrap();
        let flat: Vec<f64> = tail.iter().flatten().copied().collect();
        assert_eq!(&pop[0][..38], &flat[..]);
        assert_eq!(pop[0].len(), 40);
    }

    #[test]
    fn config_validation() {
        assert!(PlanConfig { steps_per_cycle: 21, ..PlanConfig::default() }.validate().is_err());
        assert!(PlanConfig { discount: 1.0, ..PlanConfig::default() }.validate().is_err());
        assert!(PlanConfig::default().validate().is_ok());
        assert_eq!(PlanConfig::default().population_size(1), 12);
        assert_eq!(PlanConfig::plain(50, 50).evaluations_per_plan(1), 750);
    }
}
