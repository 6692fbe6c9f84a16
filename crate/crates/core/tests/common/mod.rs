#![allow(dead_code)]

use prhea::env::{EnvSpec, Environment, Snapshot, StepResult};
use prhea::nn::Sample;
use prhea::rng::seeded;
use prhea::{Error, Result};
use rand::Rng;

/// Two-step task with three discrete actions per step.
///
/// The action is one score per choice in `[-1, 1]³`; the highest score picks
/// the choice. The first reward depends on the first choice, the second on
/// both, so the best first action is only visible by looking two steps ahead.
#[derive(Debug, Clone)]
pub struct ChoiceTree {
    pub first: [f64; 3],
    pub second: [[f64; 3]; 3],
    spec: EnvSpec,
    step: usize,
    choice: usize,
}

pub const CHOICE_ID: &str = "choicetree";

impl ChoiceTree {
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut draw = || rng.random_range(-1.0..1.0);
        let first = [draw(), draw(), draw()];
        let second = [
            [draw(), draw(), draw()],
            [draw(), draw(), draw()],
            [draw(), draw(), draw()],
        ];
        Self {
            first,
            second,
            spec: EnvSpec::new(2, vec![-1.0; 3], vec![1.0; 3], 2).unwrap(),
            step: 0,
            choice: 0,
        }
    }

    /// Index of the highest score, lowest index on ties.
    pub fn choice(action: &[f64]) -> usize {
        let mut best = 0;
        for (i, v) in action.iter().enumerate() {
            if *v > action[best] {
                best = i;
            }
        }
        best
    }

    /// Best first choice by exhaustive search over all nine sequences.
    pub fn brute_force(&self, discount: f64) -> (usize, Vec<(usize, f64)>) {
        let mut scores = Vec::new();
        for a in 0..3 {
            let best = (0..3)
                .map(|b| self.first[a] + discount * self.second[a][b])
                .fold(f64::NEG_INFINITY, f64::max);
            scores.push((a, best));
        }
        let best = scores
            .iter()
            .copied()
            .fold((0, f64::NEG_INFINITY), |acc, s| if s.1 > acc.1 { s } else { acc });
        (best.0, scores)
    }
}

impl Environment for ChoiceTree {
    fn id(&self) -> &str {
        CHOICE_ID
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.step = 0;
        self.choice = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.is_terminal() {
            return Err(Error::StepAfterTerminal(CHOICE_ID.into()));
        }
        let b = Self::choice(&self.spec.clip(action));
        let reward = if self.step == 0 {
            self.choice = b;
            self.first[b]
        } else {
            self.second[self.choice][b]
        };
        self.step += 1;
        Ok(StepResult {
            reward,
            next_state: self.observe(),
            terminal: self.is_terminal(),
        })
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.step as f64, self.choice as f64]
    }

    fn is_terminal(&self) -> bool {
        self.step >= 2
    }

    fn steps_taken(&self) -> usize {
        self.step
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            env_id: CHOICE_ID.into(),
            step: self.step,
            terminal: self.is_terminal(),
            data: vec![self.choice as f64],
        }
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        if snapshot.env_id != CHOICE_ID {
            return Err(Error::SnapshotMismatch {
                expected: CHOICE_ID.into(),
                found: snapshot.env_id.clone(),
            });
        }
        self.step = snapshot.step;
        self.choice = snapshot.data[0] as usize;
        Ok(())
    }
}

/// One-dimensional bandit with reward `-(a - target)²`, terminal after
/// `length` steps.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub target: f64,
    spec: EnvSpec,
    step: usize,
}

pub const QUADRATIC_ID: &str = "quadratic";

impl Quadratic {
    pub fn new(target: f64, length: usize) -> Self {
        Self {
            target,
            spec: EnvSpec::new(1, vec![-1.0], vec![1.0], length).unwrap(),
            step: 0,
        }
    }
}

impl Environment for Quadratic {
    fn id(&self) -> &str {
        QUADRATIC_ID
    }

    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.step = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.is_terminal() {
            return Err(Error::StepAfterTerminal(QUADRATIC_ID.into()));
        }
        let a = self.spec.clip(action)[0];
        self.step += 1;
        Ok(StepResult {
            reward: -(a - self.target).powi(2),
            next_state: self.observe(),
            terminal: self.is_terminal(),
        })
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.step as f64]
    }

    fn is_terminal(&self) -> bool {
        self.step >= self.spec.max_episode_steps
    }

    fn steps_taken(&self) -> usize {
        self.step
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            env_id: QUADRATIC_ID.into(),
            step: self.step,
            terminal: self.is_terminal(),
            data: vec![],
        }
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.step = snapshot.step;
        Ok(())
    }
}

pub fn random_batch<R: Rng>(rng: &mut R, n: usize, state_dim: usize, action_dim: usize) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            state: (0..state_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: (0..action_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
            ret: rng.random_range(-2.0..2.0),
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)`. Magnitudes below 1e-4 are floored: central
/// differences carry rounding noise near 1e-10 that would otherwise dominate
/// for vanishing gradients.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradientCheck {
    /// Largest relative error over the compared coordinates.
    pub worst: f64,
    pub compared: usize,
    /// Coordinates whose ±h stencil crosses a rectifier kink, where the loss
    /// is not differentiable and central differences are meaningless.
    pub kinks: usize,
}

/// Signs of every hidden pre-activation over the batch.
fn activation_pattern(net: &prhea::nn::Mlp, batch: &[Sample]) -> Vec<bool> {
    use prhea::nn::LEAKY_SLOPE;
    let layers = net.layers();
    let mut out = Vec::new();
    for s in batch {
        let mut a = nalgebra::DVector::from_column_slice(&s.state);
        for layer in &layers[..layers.len() - 1] {
            let z = &layer.weight * &a + &layer.bias;
            out.extend(z.iter().map(|v| *v > 0.0));
            a = z.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
        }
    }
    out
}

/// Compares the analytic joint-loss gradient with central differences
/// (step 1e-5) over every parameter of a random small instance.
pub fn gradient_check(seed: u64) -> GradientCheck {
    use prhea::nn::{joint_loss, GaussianPolicy, ValueNet};
    let mut rng = seeded(seed);
    let state_dim = rng.random_range(1..=5);
    let action_dim = rng.random_range(1..=3);
    let depth = rng.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=16)).collect();
    let mut policy = GaussianPolicy::new(state_dim, &hidden, action_dim, &mut rng);
    for v in policy.log_std.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let mut value = ValueNet::new(state_dim, &hidden, &mut rng);
    let n = rng.random_range(1..=8);
    let batch = random_batch(&mut rng, n, state_dim, action_dim);

    let analytic = joint_loss(&policy, &value, &batch).unwrap();
    let policy_grads: Vec<f64> = analytic.policy_grad.slices().concat();
    let value_grads: Vec<f64> = analytic.value_grad.slices().concat();
    let h = 1e-5;
    let mut out = GradientCheck::default();
    let record = |out: &mut GradientCheck, kink: bool, fd: f64, exact: f64| {
        if kink {
            out.kinks += 1;
        } else {
            out.compared += 1;
            out.worst = out.worst.max(relative_error(fd, exact));
        }
    };

    let mut k = 0;
    for i in 0..policy.param_slices().len() {
        for j in 0..policy.param_slices()[i].len() {
            let x = policy.param_slices()[i][j];
            let base = activation_pattern(&policy.mean_net, &batch);
            policy.param_slices_mut()[i][j] = x + h;
            let up = joint_loss(&policy, &value, &batch).unwrap().loss;
            let kink_up = activation_pattern(&policy.mean_net, &batch) != base;
            policy.param_slices_mut()[i][j] = x - h;
            let down = joint_loss(&policy, &value, &batch).unwrap().loss;
            let kink_down = activation_pattern(&policy.mean_net, &batch) != base;
            policy.param_slices_mut()[i][j] = x;
            record(&mut out, kink_up || kink_down, (up - down) / (2.0 * h), policy_grads[k]);
            k += 1;
        }
    }
    let mut k = 0;
    for i in 0..value.param_slices().len() {
        for j in 0..value.param_slices()[i].len() {
            let x = value.param_slices()[i][j];
            let base = activation_pattern(&value.net, &batch);
            value.param_slices_mut()[i][j] = x + h;
            let up = joint_loss(&policy, &value, &batch).unwrap().loss;
            let kink_up = activation_pattern(&value.net, &batch) != base;
            value.param_slices_mut()[i][j] = x - h;
            let down = joint_loss(&policy, &value, &batch).unwrap().loss;
            let kink_down = activation_pattern(&value.net, &batch) != base;
            value.param_slices_mut()[i][j] = x;
            record(&mut out, kink_up || kink_down, (up - down) / (2.0 * h), value_grads[k]);
            k += 1;
        }
    }
    out
}

pub fn sphere(x: &[f64]) -> f64 {
    -x.iter().map(|v| v * v).sum::<f64>()
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    -x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum::<f64>()
}

/// Maximizes `f` with CMA-ES; stops after `generations` or once `evaluations`
/// would be exceeded. Returns (best fitness, evaluations used).
pub fn maximize(
    f: impl Fn(&[f64]) -> f64,
    config: prhea::cmaes::CmaConfig,
    mean: &[f64],
    evaluations: usize,
    seed: u64,
) -> (f64, usize) {
    use prhea::cmaes::CmaState;
    let mut rng = seeded(seed);
    let mut state = CmaState::new(config.clone(), mean).unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut used = 0;
    for _ in 0..config.max_generations {
        if used + config.population_size > evaluations {
            break;
        }
        let scored: Vec<(Vec<f64>, f64)> = state
            .sample(config.population_size, &mut rng)
            .into_iter()
            .map(|x| {
                let fx = f(&x);
                (x, fx)
            })
            .collect();
        used += scored.len();
        best = scored.iter().map(|s| s.1).fold(best, f64::max);
        state.update(&scored).unwrap();
    }
    (best, used)
}

/// Learner settings scaled down so that the gate opens within a few hundred
/// steps and gradient steps are cheap.
pub fn small_learn(budget: u64) -> prhea::learner::LearnConfig {
    prhea::learner::LearnConfig {
        minibatch: 8,
        capacity: 400,
        replay_start: 60,
        trains_per_cycle: 5,
        step_budget: budget,
        checkpoint_every: 2,
        hidden: vec![16, 16],
        ..prhea::learner::LearnConfig::default()
    }
}

pub fn small_plan() -> prhea::planner::PlanConfig {
    prhea::planner::PlanConfig {
        horizon: 8,
        generations: 3,
        ..prhea::planner::PlanConfig::default()
    }
}

/// Plays a full episode with an open-loop action schedule.
pub fn play<E: Environment>(env: &mut E, seed: u64, mut schedule: impl FnMut(usize) -> Vec<f64>) -> (f64, usize) {
    env.reset(seed);
    let mut total = 0.0;
    let mut t = 0;
    while !env.is_terminal() {
        total += env.step(&schedule(t)).unwrap().reward;
        t += 1;
    }
    (total, t)
}

/// Best return over constant actions on a 41-point grid of `[-1, 1]`.
pub fn best_constant_return<E: Environment>(env: &mut E) -> (f64, f64) {
    (0..=40)
        .map(|k| -1.0 + k as f64 * 0.05)
        .map(|a| (play(env, 0, |_| vec![a]).0, a))
        .fold((f64::NEG_INFINITY, 0.0), |best, x| if x.0 > best.0 { x } else { best })
}

/// Best periodic stroke: open for `o` steps, close for `c`, then keep the
/// leg shut for `g`. Returns (return, o, c, g).
pub fn best_stroke_return<E: Environment>(env: &mut E) -> (f64, usize, usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0, 0, 0);
    for o in 1..=6 {
        for c in 1..=6 {
            for g in 0..=20 {
                let period = o + c + g;
                let (ret, _) = play(env, 0, |t| vec![if t % period < o { 1.0 } else { -1.0 }]);
                if ret > best.0 {
                    best = (ret, o, c, g);
                }
            }
        }
    }
    best
}

/// Steps survived by the one-step greedy controller over a 21-point grid.
pub fn greedy_survival<E: Environment>(env: &mut E, seed: u64) -> usize {
    env.reset(seed);
    let grid: Vec<f64> = (0..=20).map(|k| -1.0 + k as f64 * 0.1).collect();
    let mut t = 0;
    while !env.is_terminal() {
        let a = grid
            .iter()
            .map(|&a| {
                let mut probe = env.clone();
                (probe.step(&[a]).unwrap().reward, a)
            })
            .fold((f64::NEG_INFINITY, 0.0), |best, x| if x.0 > best.0 { x } else { best })
            .1;
        env.step(&[a]).unwrap();
        t += 1;
    }
    t
}
