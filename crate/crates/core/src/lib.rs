//! Learned robust control contraction metrics (RCCMs) and neural feedback for
//! control-affine systems on Lie groups, with a quadrotor instantiation, a
//! flatness-based planner and a deterministic closed-loop simulator.

// `!(x > y)` is used on purpose so that NaN inputs are rejected by validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod error;
pub mod exec;
pub mod manifold;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod simulator;
pub mod system;

pub use error::{Error, Result};
pub use exec::Execution;
