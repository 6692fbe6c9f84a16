//! Offline plan/learn loop.
//!
//! Each cycle plans from the current state, executes the first `T` actions of
//! the optimum, pushes `(s*_t, a*_t, R*_t)` for the executed prefix into a FIFO
//! replay buffer and, once the buffer holds `replay_start` samples, takes
//! `trains_per_cycle` RMSProp steps on the joint policy/value loss. Before the
//! gate opens the value network is not consulted at all.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{
    apply_joint_step, combine_losses, joint_loss, GaussianPolicy, RmsProp, RmsPropConfig, Sample,
    ValueNet, DEFAULT_HIDDEN,
};
use crate::parallel;
use crate::planner::{plan, run_episode, PlanConfig, Priors};
use crate::rng::{mix_seed, seeded, PlanRng};

/// A minibatch is split into this many chunks whose gradients are merged.
/// Fixed so results do not depend on the execution mode.
pub const GRADIENT_CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    data: VecDeque<Sample>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            data: VecDeque::with_capacity(capacity.min(1 << 16)),
            pushed: 0,
        }
    }

    pub(crate) fn from_parts(capacity: usize, data: Vec<Sample>, pushed: u64) -> Self {
        Self {
            capacity,
            data: data.into(),
            pushed,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Total number of samples ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.data.iter()
    }

    pub fn push<I: IntoIterator<Item = Sample>>(&mut self, samples: I) {
        for s in samples {
            if self.data.len() == self.capacity {
                self.data.pop_front();
            }
            self.data.push_back(s);
            self.pushed += 1;
        }
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<Sample>> {
        if self.data.len() < k || self.data.is_empty() {
            return Err(Error::BufferTooSmall {
                len: self.data.len(),
                requested: k,
            });
        }
        let n = self.data.len();
        Ok((0..k).map(|_| self.data[rng.random_range(0..n)].clone()).collect())
    }
}

/// How many planned actions a training cycle executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionRule {
    /// `T = max(1, ⌊L*/2⌋)`.
    #[default]
    HalfLength,
    /// `T = 1`, the real-play protocol.
    One,
}

impl ExecutionRule {
    pub fn steps(self, length: usize) -> usize {
        match self {
            ExecutionRule::HalfLength => (length / 2).max(1),
            ExecutionRule::One => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExecutionRule::HalfLength => "half-L",
            ExecutionRule::One => "fixed-1",
        }
    }
}

impl fmt::Display for ExecutionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExecutionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-L" | "half-l" | "half" => Ok(ExecutionRule::HalfLength),
            "fixed-1" | "one" | "1" => Ok(ExecutionRule::One),
            other => Err(Error::InvalidConfig(format!(
                "unknown execution rule `{other}` (expected half-L or fixed-1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub minibatch: usize,
    pub capacity: usize,
    pub replay_start: usize,
    pub trains_per_cycle: usize,
    /// Real environment steps; checked at episode boundaries.
    pub step_budget: u64,
    pub rule: ExecutionRule,
    /// Episodes between periodic checkpoints.
    pub checkpoint_every: u64,
    pub hidden: Vec<usize>,
    pub rmsprop: RmsPropConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            minibatch: 32,
            capacity: 20_000,
            replay_start: 5000,
            trains_per_cycle: 50,
            step_budget: 200_000,
            rule: ExecutionRule::HalfLength,
            checkpoint_every: 50,
            hidden: DEFAULT_HIDDEN.to_vec(),
            rmsprop: RmsPropConfig::default(),
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.capacity == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "minibatch, capacity and checkpoint cadence must be positive".into(),
            ));
        }
        if self.replay_start > self.capacity {
            return Err(Error::InvalidConfig(format!(
                "replay start {} exceeds buffer capacity {}",
                self.replay_start, self.capacity
            )));
        }
        if self.minibatch > self.replay_start.max(1) {
            return Err(Error::InvalidConfig(format!(
                "minibatch {} exceeds replay start {}",
                self.minibatch, self.replay_start
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        let r = &self.rmsprop;
        if !(r.learning_rate > 0.0 && r.decay > 0.0 && r.decay < 1.0 && r.gradient_clip > 0.0 && r.epsilon > 0.0)
        {
            return Err(Error::InvalidConfig(format!("invalid RMSProp settings {r:?}")));
        }
        Ok(())
    }
}

/// What happened in one training cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub buffer_before: usize,
    /// Whether the value network took part in planning.
    pub value_used: bool,
    /// `R_L` of the chosen plan.
    pub bootstrap: f64,
    pub planned_length: usize,
    pub executed: usize,
    pub reward: f64,
    pub terminal: bool,
    pub gradient_steps: usize,
    pub minibatch_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub steps: u64,
    pub episode: u64,
    pub ret: f64,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str = "steps,episode,return";

    /// One CSV line without the newline. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.steps, self.episode, self.ret)
    }
}

/// Writes a training curve as CSV with a header row.
pub fn write_curve_csv<W: std::io::Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "{}", CurveRow::CSV_HEADER)?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}

/// Single owner of networks, optimizers and replay buffer.
#[derive(Debug, Clone)]
pub struct Trainer<E: Environment> {
    env: E,
    pub plan: PlanConfig,
    pub learn: LearnConfig,
    pub seed: u64,
    pub policy: GaussianPolicy,
    pub value: ValueNet,
    pub policy_opt: RmsProp,
    pub value_opt: RmsProp,
    pub buffer: ReplayBuffer,
    pub rng: PlanRng,
    pub steps: u64,
    pub episodes: u64,
    record: bool,
    log: Vec<CycleReport>,
}

impl<E: Environment> Trainer<E> {
    pub fn new(env: E, plan: PlanConfig, learn: LearnConfig, seed: u64) -> Result<Self> {
        plan.validate()?;
        learn.validate()?;
        let spec = env.spec().clone();
        let mut init = seeded(mix_seed(seed, u64::MAX));
        let policy = GaussianPolicy::new(spec.state_dim, &learn.hidden, spec.action_dim, &mut init);
        let value = ValueNet::new(spec.state_dim, &learn.hidden, &mut init);
        let policy_opt = RmsProp::new(learn.rmsprop, policy.param_count());
        let value_opt = RmsProp::new(learn.rmsprop, value.param_count());
        Ok(Self {
            env,
            buffer: ReplayBuffer::new(learn.capacity),
            plan,
            learn,
            seed,
            policy,
            value,
            policy_opt,
            value_opt,
            rng: seeded(seed),
            steps: 0,
            episodes: 0,
            record: false,
            log: Vec::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        env: E,
        plan: PlanConfig,
        learn: LearnConfig,
        seed: u64,
        policy: GaussianPolicy,
        value: ValueNet,
        policy_opt: RmsProp,
        value_opt: RmsProp,
        buffer: ReplayBuffer,
        rng: PlanRng,
        steps: u64,
        episodes: u64,
    ) -> Self {
        Self {
            env,
            plan,
            learn,
            seed,
            policy,
            value,
            policy_opt,
            value_opt,
            buffer,
            rng,
            steps,
            episodes,
            record: false,
            log: Vec::new(),
        }
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    /// Keep a [`CycleReport`] for every cycle from now on.
    pub fn record_cycles(&mut self, on: bool) {
        self.record = on;
    }

    pub fn cycle_log(&self) -> &[CycleReport] {
        &self.log
    }

    pub fn gate_open(&self) -> bool {
        self.buffer.len() >= self.learn.replay_start
    }

    pub fn priors(&self) -> Priors<'_> {
        Priors::new(
            self.plan.use_policy_prior.then_some(&self.policy),
            (self.plan.use_value_prior && self.gate_open()).then_some(&self.value),
        )
    }

    /// Resets the environment for the next episode.
    pub fn begin_episode(&mut self) -> Vec<f64> {
        self.env.reset(mix_seed(self.seed, self.episodes))
    }

    /// One plan → execute → push → train cycle. The environment must be
    /// mid-episode. Returns the tail to warm-start the next cycle.
    pub fn training_cycle(&mut self, prev_tail: Option<&[Vec<f64>]>) -> Result<(CycleReport, Vec<Vec<f64>>)> {
        if self.env.is_terminal() {
            return Err(Error::StepAfterTerminal(self.env.id().to_string()));
        }
        let buffer_before = self.buffer.len();
        let value_used = self.plan.use_value_prior && self.gate_open();
        let priors = Priors::new(
            self.plan.use_policy_prior.then_some(&self.policy),
            value_used.then_some(&self.value),
        );
        let result = plan(&self.env, &self.plan, priors, prev_tail, &mut self.rng)?;
        let t = self.learn.rule.steps(result.length).min(result.length);
        let mut reward = 0.0;
        let mut terminal = false;
        let mut executed = 0;
        for a in &result.actions[..t] {
            let step = self.env.step(a)?;
            reward += step.reward;
            executed += 1;
            if step.terminal {
                terminal = true;
                break;
            }
        }
        self.buffer.push((0..executed).map(|i| Sample {
            state: result.states[i].clone(),
            action: result.actions[i].clone(),
            ret: result.returns[i],
        }));
        self.steps += executed as u64;

        let mut minibatch_sizes = Vec::new();
        if self.gate_open() {
            for _ in 0..self.learn.trains_per_cycle {
                minibatch_sizes.push(self.gradient_step()?);
            }
        }
        let report = CycleReport {
            buffer_before,
            value_used,
            bootstrap: result.bootstrap,
            planned_length: result.length,
            executed,
            reward,
            terminal,
            gradient_steps: minibatch_sizes.len(),
            minibatch_sizes,
        };
        if self.record {
            self.log.push(report.clone());
        }
        Ok((report, result.tail(executed)))
    }

    /// One RMSProp step on a uniformly drawn minibatch. Returns its size.
    pub fn gradient_step(&mut self) -> Result<usize> {
        let batch = self.buffer.sample(self.learn.minibatch, &mut self.rng)?;
        let chunk = batch.len().div_ceil(GRADIENT_CHUNKS).max(1);
        let chunks: Vec<&[Sample]> = batch.chunks(chunk).collect();
        let (policy, value) = (&self.policy, &self.value);
        let parts: Vec<(usize, _)> = parallel::map(self.plan.execution, &chunks, |_, c| {
            joint_loss(policy, value, c).map(|l| (c.len(), l))
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let loss = combine_losses(parts).expect("non-empty minibatch");
        apply_joint_step(
            &mut self.policy,
            &mut self.value,
            &loss,
            &mut self.policy_opt,
            &mut self.value_opt,
        )?;
        Ok(batch.len())
    }

    /// Plays one full training episode. Returns the undiscounted return.
    pub fn run_episode(&mut self) -> Result<CurveRow> {
        self.begin_episode();
        let mut tail: Option<Vec<Vec<f64>>> = None;
        let mut ret = 0.0;
        while !self.env.is_terminal() {
            let (report, next) = self.training_cycle(tail.as_deref())?;
            ret += report.reward;
            tail = Some(next);
        }
        self.episodes += 1;
        Ok(CurveRow {
            steps: self.steps,
            episode: self.episodes,
            ret,
        })
    }

    /// Runs episodes until the step budget is reached.
    ///
    /// `on_episode` sees every curve row; `on_checkpoint` is called every
    /// `checkpoint_every` episodes and once more at the end (also when the
    /// budget is already exhausted).
    pub fn train<F, G>(&mut self, mut on_episode: F, mut on_checkpoint: G) -> Result<Vec<CurveRow>>
    where
        F: FnMut(&CurveRow) -> Result<()>,
        G: FnMut(&Self) -> Result<()>,
    {
        let mut curve = Vec::new();
        while self.steps < self.learn.step_budget {
            let row = self.run_episode()?;
            on_episode(&row)?;
            curve.push(row);
            if self.episodes.is_multiple_of(self.learn.checkpoint_every) && self.steps < self.learn.step_budget {
                on_checkpoint(self)?;
            }
        }
        on_checkpoint(self)?;
        Ok(curve)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single episode.
    pub std: f64,
}

impl EvalReport {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len();
        let mean = if n == 0 { 0.0 } else { returns.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { returns, mean, std }
    }
}

/// Seeds used by evaluation episode `index`: (environment reset, planner).
pub fn episode_seeds(seed: u64, index: u64) -> (u64, u64) {
    (mix_seed(seed, index), mix_seed(!seed, index))
}

/// Real-play evaluation with the given priors. Each episode uses its own
/// reset and planner seeds derived from `seed`.
pub fn evaluate<E: Environment>(
    env: &E,
    config: &PlanConfig,
    priors: Priors<'_>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut returns = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let (reset, planner) = episode_seeds(seed, i as u64);
        let mut env = env.clone();
        env.reset(reset);
        let out = run_episode(&mut env, config, priors, &mut seeded(planner), None)?;
        returns.push(out.total_return);
    }
    Ok(EvalReport::from_returns(returns))
}

/// Real-play settings for a trained agent: same search budget, `T = 1`.
pub fn evaluation_config(training: &PlanConfig) -> PlanConfig {
    PlanConfig {
        steps_per_cycle: 1,
        ..training.clone()
    }
}
