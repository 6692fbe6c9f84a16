//! One-legged swimmer with a reward trap.
//!
//! Internal state `[x, v, θ, ω, u⁻]`: body position and velocity, leg opening
//! `θ ∈ [0, 1]` (0 = folded against the body), its rate, and the previous
//! torque command. The action is the leg torque command in `[-1, 1]`,
//! positive opens. Observation `[v, θ, ω, t/T]` with `t/T` the elapsed
//! fraction of the episode; position and previous torque are not observed.
//!
//! Reward is forward velocity minus a small quadratic effort penalty on the
//! joint torque. Closing an open leg gives the body a forward velocity
//! impulse proportional to the distance swept; opening it pushes the body
//! back and adds drag, so every stroke starts with a phase of
//! negative reward. Pressing the folded leg shut drives a small fin, which
//! gives a steady but slow constant-action gait: the local optimum a
//! short-sighted planner settles into.

use super::params::{trapswimmer::*, DT};
use super::{impl_task, Core, EnvSpec};

pub const ID: &str = "trapswimmer";

/// `v_x - c‖u‖²` with `u` the joint torque.
pub fn swimmer_reward(forward_velocity: f64, torque: &[f64]) -> f64 {
    forward_velocity - EFFORT_COST * torque.iter().map(|u| u * u).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct TrapSwimmer {
    core: Core<5>,
    spec: EnvSpec,
}

impl Default for TrapSwimmer {
    fn default() -> Self {
        Self::new()
    }
}

impl TrapSwimmer {
    pub fn new() -> Self {
        Self {
            core: Core::new([0.0; 5]),
            spec: EnvSpec::new(4, vec![-1.0], vec![1.0], MAX_STEPS).expect("static spec"),
        }
    }

    pub fn position(&self) -> f64 {
        self.core.phys[0]
    }

    pub fn velocity(&self) -> f64 {
        self.core.phys[1]
    }

    pub fn leg_opening(&self) -> f64 {
        self.core.phys[2]
    }

    fn reset_core(&mut self, _seed: u64) {
        self.core = Core::new([0.0; 5]);
    }

    fn observe_core(&self) -> Vec<f64> {
        let [_, v, th, om, _] = self.core.phys;
        vec![v, th, om, self.core.step as f64 / self.spec.max_episode_steps as f64]
    }

    fn advance(&mut self, action: &[f64]) -> (f64, bool) {
        let [x, v, th0, om, _] = self.core.phys;
        let u = action[0];
        let mut om = om + DT * (LEG_ACCEL * u - LEG_DAMP * om);
        let th = (th0 + DT * om).clamp(0.0, 1.0);
        if th == 0.0 || th == 1.0 {
            om = 0.0;
        }
        // Thrust follows the distance the leg actually swept this step.
        let swept = th - th0;
        let stroke = if swept < 0.0 {
            THRUST_CLOSE * -swept
        } else {
            -THRUST_OPEN * swept
        };
        let fin = if th < FIN_MAX_OPENING {
            DT * FIN_THRUST * (-u).max(0.0)
        } else {
            0.0
        };
        let drag = DRAG_CLOSED + DRAG_OPEN * th;
        let v = v + stroke + fin - DT * drag * v;
        self.core.phys = [x + DT * v, v, th, om, u];
        (swimmer_reward(v, &[GEAR * u]), false)
    }
}

impl_task!(TrapSwimmer, ID);
