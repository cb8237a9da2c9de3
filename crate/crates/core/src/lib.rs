pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod ppo;
pub mod pqn;
pub mod rollout;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
