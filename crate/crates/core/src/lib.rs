//! Meta-learned intrinsic rewards for reinforcement-learning agents.
//!
//! An agent's policy is trained by plain policy gradient on rewards produced
//! by a learned network η. η itself is trained across many agent lifetimes by
//! differentiating the agent's extrinsic lifetime return through its own
//! parameter updates.

pub mod autodiff;
pub mod baselines;
pub mod env;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod harness;
pub mod inner;
pub mod meta;
pub mod nets;

pub use error::{Error, Result};
