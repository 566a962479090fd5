//! PPO-Clip viewed as hinge-loss policy optimization.
//!
//! The crate covers finite MDPs with exact evaluation, the generalized hinge
//! objective and its subgradients, entropic mirror descent (EMDA), tabular
//! and two-layer neural PPO-Clip, and numerical checks of the theory.

pub mod checks;
pub mod emda;
pub mod error;
pub mod harness;
pub mod hinge;
pub mod mdp;
pub mod neural;
pub mod nn;
pub mod rng;
pub mod tabular;

pub use error::{Error, Result};
