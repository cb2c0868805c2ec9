//! Highway value iteration networks.
//!
//! * [`autodiff`]: dense tensors with reverse-mode differentiation.
//! * [`planner`]: latent planning modules (VI, VE, filter and aggregate gates)
//!   and the three stacked planner variants.
//! * [`maze`]: grid mazes, shortest-path labelling and dataset files.
//! * [`tabular`]: explicit-MDP highway value iteration and its convergence checks.
//! * [`train`]: imitation training, rollout evaluation and metric export.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod maze;
pub mod planner;
pub mod seed;
pub mod tabular;
pub mod train;

pub use error::{Error, Result};
