//! Multi-agent particle-world laboratory.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod extensions;
pub mod numerics;
pub mod par;
pub mod policy;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
