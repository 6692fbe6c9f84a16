//! Rolling-horizon evolutionary planning (RHEA) with learned priors.
//!
//! The planner optimizes fixed-length action sequences with CMA-ES against a
//! forward model. A Gaussian policy network seeds the first population and a
//! value network bootstraps the return beyond the planning horizon. Both
//! networks are trained offline from the planner's own output by alternating
//! planning and learning cycles.
//!
//! Module map:
//!
//! - [`cmaes`]: CMA-ES over flat real vectors with injectable first generation.
//! - [`nn`]: small MLPs, the Gaussian policy, the value network, the joint
//!   loss and RMSProp.
//! - [`env`]: deterministic forward models with snapshot/restore.
//! - [`planner`]: fitness evaluation, population seeding, the plan loop and
//!   whole-episode rollouts.
//! - [`learner`]: replay buffer, training cycles, training runs and evaluation.
//! - [`persistence`]: checkpoint container.
//! - [`parallel`]: the data-parallel map used for population evaluation.

pub mod cmaes;
pub mod env;
pub mod error;
pub mod learner;
pub mod nn;
pub mod parallel;
pub mod persistence;
pub mod planner;
pub mod rng;

pub use error::{Error, Result};
