//! Run settings: built-in defaults, then a TOML file, then flags.

use std::path::Path;

use anyhow::{Context, Result};
use clap::Args;
use prhea::learner::{ExecutionRule, LearnConfig};
use prhea::nn::RmsPropConfig;
use prhea::parallel::Execution;
use prhea::planner::PlanConfig;
use serde::{Deserialize, Serialize};

/// Every tunable knob. Unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Planning horizon H.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// CMA-ES generations per plan.
    #[arg(long)]
    pub generations: Option<usize>,
    /// Population size; omitted means 4 + floor(3 ln D).
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub discount: Option<f64>,
    /// Initial step size as a fraction of the action half-width.
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub policy_prior: Option<bool>,
    #[arg(long)]
    pub value_prior: Option<bool>,
    /// Training execution rule: half-L or fixed-1.
    #[arg(long)]
    pub rule: Option<String>,
    #[arg(long)]
    pub minibatch: Option<usize>,
    /// Replay buffer capacity.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Buffer size at which the value prior and training switch on.
    #[arg(long)]
    pub replay_start: Option<usize>,
    /// Gradient steps per training cycle.
    #[arg(long)]
    pub trains: Option<usize>,
    /// Episodes between checkpoints.
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gradient_clip: Option<f64>,
}

impl Overrides {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fields set here win over `lower`.
    pub fn over(self, lower: Overrides) -> Overrides {
        Overrides {
            horizon: self.horizon.or(lower.horizon),
            generations: self.generations.or(lower.generations),
            population: self.population.or(lower.population),
            discount: self.discount.or(lower.discount),
            step_size: self.step_size.or(lower.step_size),
            policy_prior: self.policy_prior.or(lower.policy_prior),
            value_prior: self.value_prior.or(lower.value_prior),
            rule: self.rule.or(lower.rule),
            minibatch: self.minibatch.or(lower.minibatch),
            capacity: self.capacity.or(lower.capacity),
            replay_start: self.replay_start.or(lower.replay_start),
            trains: self.trains.or(lower.trains),
            checkpoint_every: self.checkpoint_every.or(lower.checkpoint_every),
            hidden: self.hidden.or(lower.hidden),
            learning_rate: self.learning_rate.or(lower.learning_rate),
            gradient_clip: self.gradient_clip.or(lower.gradient_clip),
        }
    }

    /// Flags over the optional config file.
    pub fn layered(self, file: Option<&Path>) -> Result<Overrides> {
        match file {
            Some(path) => Ok(self.over(Overrides::from_file(path)?)),
            None => Ok(self),
        }
    }

    pub fn plan(&self, base: PlanConfig, execution: Execution) -> Result<PlanConfig> {
        let plan = PlanConfig {
            horizon: self.horizon.unwrap_or(base.horizon),
            generations: self.generations.unwrap_or(base.generations),
            population: self.population.or(base.population),
            discount: self.discount.unwrap_or(base.discount),
            use_policy_prior: self.policy_prior.unwrap_or(base.use_policy_prior),
            use_value_prior: self.value_prior.unwrap_or(base.use_value_prior),
            steps_per_cycle: base.steps_per_cycle,
            step_size_fraction: self.step_size.unwrap_or(base.step_size_fraction),
            execution,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn learn(&self, base: LearnConfig, budget: u64) -> Result<LearnConfig> {
        let rule = match &self.rule {
            Some(s) => s.parse::<ExecutionRule>()?,
            None => base.rule,
        };
        let learn = LearnConfig {
            minibatch: self.minibatch.unwrap_or(base.minibatch),
            capacity: self.capacity.unwrap_or(base.capacity),
            replay_start: self.replay_start.unwrap_or(base.replay_start),
            trains_per_cycle: self.trains.unwrap_or(base.trains_per_cycle),
            step_budget: budget,
            rule,
            checkpoint_every: self.checkpoint_every.unwrap_or(base.checkpoint_every),
            hidden: self.hidden.clone().unwrap_or(base.hidden),
            rmsprop: RmsPropConfig {
                learning_rate: self.learning_rate.unwrap_or(base.rmsprop.learning_rate),
                gradient_clip: self.gradient_clip.unwrap_or(base.rmsprop.gradient_clip),
                ..base.rmsprop
            },
        };
        learn.validate()?;
        Ok(learn)
    }
}

/// The fully resolved settings, printed before every run. The output parses
/// back as a config file.
pub fn describe(plan: &PlanConfig, learn: Option<&LearnConfig>) -> String {
    let o = Overrides {
        horizon: Some(plan.horizon),
        generations: Some(plan.generations),
        population: plan.population,
        discount: Some(plan.discount),
        step_size: Some(plan.step_size_fraction),
        policy_prior: Some(plan.use_policy_prior),
        value_prior: Some(plan.use_value_prior),
        rule: learn.map(|l| l.rule.to_string()),
        minibatch: learn.map(|l| l.minibatch),
        capacity: learn.map(|l| l.capacity),
        replay_start: learn.map(|l| l.replay_start),
        trains: learn.map(|l| l.trains_per_cycle),
        checkpoint_every: learn.map(|l| l.checkpoint_every),
        hidden: learn.map(|l| l.hidden.clone()),
        learning_rate: learn.map(|l| l.rmsprop.learning_rate),
        gradient_clip: learn.map(|l| l.rmsprop.gradient_clip),
    };
    toml::to_string(&o).expect("settings serialize")
}
