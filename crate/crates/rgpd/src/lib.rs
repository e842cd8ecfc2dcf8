//! RGPD: physics-informed spatio-temporal graph network for RUL/SOH
//! prognostics, with tabular Q-learning over physics-loss weights and a
//! soft actor-critic feature modulator.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod metrics;
pub mod model;
pub mod error;
pub mod graph;
pub mod physics;
pub mod rl;
pub mod sac;
pub mod tau;
pub mod train;
pub mod nn;

pub use autodiff::Tensor;
pub use error::{Error, Result};
