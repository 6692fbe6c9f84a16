//! Balancing walker that is paid for speed.
//!
//! An inverted pendulum riding on a driven base. Internal state
//! `[x, v, φ, φ̇, m]`: base position and speed, body tilt (positive leans
//! forward), tilt rate and the actuator output, which follows the command
//! with a first-order lag. The action commands the base acceleration in
//! `[-1, 1]`. Observation `[v, φ, φ̇, m, t/T]`.
//!
//! Reward is forward speed plus an alive bonus. Holding a speed against drag
//! requires a forward lean, and the faster the walker goes the closer that
//! lean sits to the point where the actuator can no longer bring the body
//! back. Past that point the fall is slow but certain, and the episode ends
//! once the tilt exceeds the threshold.

use super::params::{leanwalker::*, DT};
use super::{impl_task, Core, EnvSpec};

pub const ID: &str = "leanwalker";

#[derive(Debug, Clone)]
pub struct LeanWalker {
    core: Core<5>,
    spec: EnvSpec,
}

impl Default for LeanWalker {
    fn default() -> Self {
        Self::new()
    }
}

impl LeanWalker {
    pub fn new() -> Self {
        Self {
            core: Core::new([0.0; 5]),
            spec: EnvSpec::new(5, vec![-1.0], vec![1.0], MAX_STEPS).expect("static spec"),
        }
    }

    pub fn tilt(&self) -> f64 {
        self.core.phys[2]
    }

    pub fn speed(&self) -> f64 {
        self.core.phys[1]
    }

    fn reset_core(&mut self, seed: u64) {
        // Deterministic tilt in [-noise, noise] from the seed.
        let unit = (crate::rng::mix_seed(seed, 0x1ea4) >> 11) as f64 / (1u64 << 53) as f64;
        let tilt = INITIAL_TILT_NOISE * (2.0 * unit - 1.0);
        self.core = Core::new([0.0, 0.0, tilt, 0.0, 0.0]);
    }

    fn observe_core(&self) -> Vec<f64> {
        let [_, v, phi, dphi, m] = self.core.phys;
        vec![v, phi, dphi, m, self.core.step as f64 / self.spec.max_episode_steps as f64]
    }

    fn advance(&mut self, action: &[f64]) -> (f64, bool) {
        let [x, v, phi, dphi, m] = self.core.phys;
        let m = m + DT * (action[0] - m) / ACTUATOR_LAG;
        let accel = ACCEL * m;
        let ddphi = GRAVITY * phi.sin() - accel * phi.cos() - TILT_DAMPING * dphi;
        let dphi = dphi + DT * ddphi;
        let phi = phi + DT * dphi;
        let v = v + DT * (accel - DRAG * v);
        self.core.phys = [x + DT * v, v, phi, dphi, m];
        let fell = phi.abs() > MAX_TILT;
        (SPEED_REWARD * v + ALIVE_BONUS, fell)
    }
}

impl_task!(LeanWalker, ID);
