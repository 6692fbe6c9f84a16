//! Planar double integrator driven toward a fixed goal.
//!
//! Observation `[x, y, vx, vy]`, action a force in `[-1, 1]²`. The reward is
//! the reduction of the distance to the goal over the step, so an episode's
//! return is the total distance closed. No failure termination; episodes end
//! at the step limit.

use super::params::{pointmass::*, DT};
use super::{impl_task, Core, EnvSpec};

pub const ID: &str = "pointmass";

#[derive(Debug, Clone)]
pub struct PointMass {
    core: Core<4>,
    spec: EnvSpec,
}

impl Default for PointMass {
    fn default() -> Self {
        Self::new()
    }
}

impl PointMass {
    pub fn new() -> Self {
        Self {
            core: Core::new([0.0; 4]),
            spec: EnvSpec::new(4, vec![-1.0; 2], vec![1.0; 2], MAX_STEPS).expect("static spec"),
        }
    }

    pub fn distance_to_goal(&self) -> f64 {
        let [x, y, ..] = self.core.phys;
        ((x - GOAL[0]).powi(2) + (y - GOAL[1]).powi(2)).sqrt()
    }

    fn reset_core(&mut self, _seed: u64) {
        self.core = Core::new([0.0; 4]);
    }

    fn observe_core(&self) -> Vec<f64> {
        self.core.phys.to_vec()
    }

    fn advance(&mut self, action: &[f64]) -> (f64, bool) {
        let before = self.distance_to_goal();
        let [x, y, vx, vy] = self.core.phys;
        let vx = vx + DT * (GAIN * action[0] - DAMPING * vx);
        let vy = vy + DT * (GAIN * action[1] - DAMPING * vy);
        self.core.phys = [x + DT * vx, y + DT * vy, vx, vy];
        (before - self.distance_to_goal(), false)
    }
}

impl_task!(PointMass, ID);
