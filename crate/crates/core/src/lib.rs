//! Stable surrogate risk minimization for weakly supervised classification.
//!
//! The crate covers bounded symmetric losses, synthetic weak-supervision
//! generators, the absolute-value surrogate risk and its baselines, a small
//! from-scratch MLP with manual backprop, a minibatch trainer, numerical
//! analysis helpers, and a config-driven experiment runner.

pub mod analysis;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod rng;
pub mod risks;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
