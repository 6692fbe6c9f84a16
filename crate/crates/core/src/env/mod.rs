//! Deterministic forward models.
//!
//! Every task exposes `reset`, `step`, `snapshot` and `restore`. A restored
//! environment replays any action sequence bit-exactly, which is what lets the
//! planner evaluate many candidate sequences from the same real state.
//!
//! Tasks are fixed-step ODEs integrated with semi-implicit Euler. All of
//! their constants live in [`params`].

pub mod leanwalker;
pub mod params;
pub mod pointmass;
pub mod trapswimmer;

use std::fmt;

pub use leanwalker::LeanWalker;
pub use pointmass::PointMass;
pub use trapswimmer::TrapSwimmer;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn new(state_dim: usize, action_low: Vec<f64>, action_high: Vec<f64>, max_episode_steps: usize) -> Result<Self> {
        if action_low.len() != action_high.len() {
            return Err(Error::ShapeMismatch {
                what: "action bounds",
                expected: action_low.len(),
                found: action_high.len(),
            });
        }
        if !action_low.iter().zip(&action_high).all(|(lo, hi)| lo < hi) {
            return Err(Error::InvalidConfig("action_low must be below action_high".into()));
        }
        if state_dim == 0 || action_low.is_empty() || max_episode_steps == 0 {
            return Err(Error::InvalidConfig("environment dimensions must be positive".into()));
        }
        Ok(Self {
            state_dim,
            action_dim: action_low.len(),
            action_low,
            action_high,
            max_episode_steps,
        })
    }

    /// Clamps every component into the action box.
    pub fn clip(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi + lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Full simulator state of one environment, tagged with its owner's id.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub env_id: String,
    pub step: usize,
    pub terminal: bool,
    pub data: Vec<f64>,
}

impl Snapshot {
    /// Stable byte encoding (id, counter, flag, little-endian payload).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.env_id.len() + 8 * self.data.len());
        out.extend_from_slice(&(self.env_id.len() as u64).to_le_bytes());
        out.extend_from_slice(self.env_id.as_bytes());
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.push(self.terminal as u8);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Forward-model contract used by the planner.
pub trait Environment: Clone + Send + Sync {
    fn id(&self) -> &str;
    fn spec(&self) -> &EnvSpec;
    /// Resets to the seeded initial state and returns the observation.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    /// Advances one step. The action is clipped to the bounds first.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    fn observe(&self) -> Vec<f64>;
    fn is_terminal(&self) -> bool;
    fn steps_taken(&self) -> usize;
    fn snapshot(&self) -> Snapshot;
    fn restore(&mut self, snapshot: &Snapshot) -> Result<()>;
}

/// Shared bookkeeping for the built-in tasks: physical state, step counter
/// and terminal flag.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Core<const N: usize> {
    pub phys: [f64; N],
    pub step: usize,
    pub terminal: bool,
}

impl<const N: usize> Core<N> {
    pub fn new(phys: [f64; N]) -> Self {
        Self {
            phys,
            step: 0,
            terminal: false,
        }
    }

    pub fn snapshot(&self, id: &str) -> Snapshot {
        Snapshot {
            env_id: id.to_string(),
            step: self.step,
            terminal: self.terminal,
            data: self.phys.to_vec(),
        }
    }

    pub fn restore(&mut self, id: &str, snapshot: &Snapshot) -> Result<()> {
        if snapshot.env_id != id {
            return Err(Error::SnapshotMismatch {
                expected: id.to_string(),
                found: snapshot.env_id.clone(),
            });
        }
        if snapshot.data.len() != N {
            return Err(Error::ShapeMismatch {
                what: "snapshot payload",
                expected: N,
                found: snapshot.data.len(),
            });
        }
        self.phys.copy_from_slice(&snapshot.data);
        self.step = snapshot.step;
        self.terminal = snapshot.terminal;
        Ok(())
    }

    pub fn begin_step(&self, id: &str, spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
        if self.terminal {
            return Err(Error::StepAfterTerminal(id.to_string()));
        }
        if action.len() != spec.action_dim {
            return Err(Error::ShapeMismatch {
                what: "action",
                expected: spec.action_dim,
                found: action.len(),
            });
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::NonFinite("action"));
        }
        Ok(spec.clip(action))
    }
}

/// Identifier of a built-in task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    PointMass,
    TrapSwimmer,
    LeanWalker,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::PointMass, TaskId::TrapSwimmer, TaskId::LeanWalker];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::PointMass => pointmass::ID,
            TaskId::TrapSwimmer => trapswimmer::ID,
            TaskId::LeanWalker => leanwalker::ID,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            pointmass::ID => Ok(TaskId::PointMass),
            trapswimmer::ID => Ok(TaskId::TrapSwimmer),
            leanwalker::ID => Ok(TaskId::LeanWalker),
            _ => Err(Error::UnknownEnv(s.to_string())),
        }
    }
}

/// Any built-in task, selected at runtime by id.
#[derive(Debug, Clone)]
pub enum Task {
    PointMass(PointMass),
    TrapSwimmer(TrapSwimmer),
    LeanWalker(LeanWalker),
}

impl Task {
    pub fn new(id: TaskId) -> Self {
        match id {
            TaskId::PointMass => Task::PointMass(PointMass::new()),
            TaskId::TrapSwimmer => Task::TrapSwimmer(TrapSwimmer::new()),
            TaskId::LeanWalker => Task::LeanWalker(LeanWalker::new()),
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Ok(Self::new(id.parse()?))
    }

    pub fn task_id(&self) -> TaskId {
        match self {
            Task::PointMass(_) => TaskId::PointMass,
            Task::TrapSwimmer(_) => TaskId::TrapSwimmer,
            Task::LeanWalker(_) => TaskId::LeanWalker,
        }
    }
}

macro_rules! delegate {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            Task::PointMass($e) => $body,
            Task::TrapSwimmer($e) => $body,
            Task::LeanWalker($e) => $body,
        }
    };
}

impl Environment for Task {
    fn id(&self) -> &str {
        delegate!(self, e => e.id())
    }
    fn spec(&self) -> &EnvSpec {
        delegate!(self, e => e.spec())
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        delegate!(self, e => e.reset(seed))
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        delegate!(self, e => e.step(action))
    }
    fn observe(&self) -> Vec<f64> {
        delegate!(self, e => e.observe())
    }
    fn is_terminal(&self) -> bool {
        delegate!(self, e => e.is_terminal())
    }
    fn steps_taken(&self) -> usize {
        delegate!(self, e => e.steps_taken())
    }
    fn snapshot(&self) -> Snapshot {
        delegate!(self, e => e.snapshot())
    }
    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        delegate!(self, e => e.restore(snapshot))
    }
}

/// Implements the boilerplate parts of [`Environment`] for a task struct with
/// fields `core: Core<N>` and `spec: EnvSpec` and inherent methods
/// `observe_core`, `reset_core` and `advance`.
macro_rules! impl_task {
    ($ty:ty, $id:expr) => {
        impl $crate::env::Environment for $ty {
            fn id(&self) -> &str {
                $id
            }
            fn spec(&self) -> &$crate::env::EnvSpec {
                &self.spec
            }
            fn reset(&mut self, seed: u64) -> Vec<f64> {
                self.reset_core(seed);
                self.observe_core()
            }
            fn step(&mut self, action: &[f64]) -> $crate::error::Result<$crate::env::StepResult> {
                let action = self.core.begin_step($id, &self.spec, action)?;
                let (reward, fell) = self.advance(&action);
                if !reward.is_finite() {
                    return Err($crate::error::Error::NonFinite("reward"));
                }
                self.core.step += 1;
                self.core.terminal = fell || self.core.step >= self.spec.max_episode_steps;
                Ok($crate::env::StepResult {
                    reward,
                    next_state: self.observe_core(),
                    terminal: self.core.terminal,
                })
            }
            fn observe(&self) -> Vec<f64> {
                self.observe_core()
            }
            fn is_terminal(&self) -> bool {
                self.core.terminal
            }
            fn steps_taken(&self) -> usize {
                self.core.step
            }
            fn snapshot(&self) -> $crate::env::Snapshot {
                self.core.snapshot($id)
            }
            fn restore(&mut self, snapshot: &$crate::env::Snapshot) -> $crate::error::Result<()> {
                self.core.restore($id, snapshot)
            }
        }
    };
}
pub(crate) use impl_task;
