//! Physical constants of the built-in tasks.
//!
//! All tasks integrate with semi-implicit Euler at a fixed step of [`DT`].
//! Acceptance tests depend on these values; change them together with the
//! tests that certify each task's reward structure.

/// Integration step (seconds).
pub const DT: f64 = 0.05;

pub mod pointmass {
    /// Force per unit action.
    pub const GAIN: f64 = 2.0;
    /// Linear velocity damping (1/s).
    pub const DAMPING: f64 = 1.0;
    pub const GOAL: [f64; 2] = [1.0, -0.5];
    pub const MAX_STEPS: usize = 100;
}

pub mod trapswimmer {
    /// Joint torque per unit action; the effort penalty is on the torque.
    pub const GEAR: f64 = 20.0;
    /// Effort penalty weight on the squared torque.
    pub const EFFORT_COST: f64 = 1e-5;
    /// Leg angular acceleration per unit action (opening fraction per s²).
    pub const LEG_ACCEL: f64 = 200.0;
    /// Leg damping (1/s).
    pub const LEG_DAMP: f64 = 20.0;
    /// Forward velocity gained per unit of leg closing.
    pub const THRUST_CLOSE: f64 = 1.03;
    /// Backward velocity per unit of leg opening.
    pub const THRUST_OPEN: f64 = 1.0;
    /// Constant thrust from pressing the closed leg against the body.
    pub const FIN_THRUST: f64 = 0.01;
    /// Opening below which the fin works.
    pub const FIN_MAX_OPENING: f64 = 0.05;
    /// Body drag with the leg closed (1/s).
    pub const DRAG_CLOSED: f64 = 0.05;
    /// Extra body drag with the leg fully open (1/s).
    pub const DRAG_OPEN: f64 = 0.5;
    pub const MAX_STEPS: usize = 300;
}

pub mod leanwalker {
    /// Gravity over body length (1/s²).
    pub const GRAVITY: f64 = 1.0;
    /// Maximum ground acceleration (m/s²) per unit action, also in 1/s² on the tilt.
    pub const ACCEL: f64 = 1.0;
    /// Tilt damping (1/s).
    pub const TILT_DAMPING: f64 = 0.2;
    /// Actuator time constant (s).
    pub const ACTUATOR_LAG: f64 = 0.1;
    /// Rolling drag on the forward speed (1/s).
    pub const DRAG: f64 = 0.3;
    /// Reward per step while upright.
    pub const ALIVE_BONUS: f64 = 1.0;
    /// Reward per unit forward speed.
    pub const SPEED_REWARD: f64 = 1.0;
    /// Tilt (rad) beyond which the walker has fallen.
    pub const MAX_TILT: f64 = 1.2;
    /// Half-width of the seeded initial tilt (rad).
    pub const INITIAL_TILT_NOISE: f64 = 0.01;
    pub const MAX_STEPS: usize = 400;
}
