//! Tabular offline imitation from observation.
//!
//! * [`mdp`]: tabular MDPs, planning, exact occupancies and TV distance.
//! * [`datagen`]: random MDPs, dataset sampling, count-based estimates.
//! * [`dice`]: distribution-correction duals, solvers and policy extraction.
//! * [`baselines`]: behavior cloning, inverse dynamics, BCO.

pub mod baselines;
pub mod datagen;
pub mod dice;
pub mod dual;
pub mod error;
pub mod mdp;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
