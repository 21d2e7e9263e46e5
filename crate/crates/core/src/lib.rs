//! Gated depth repair for a camera depth channel under adversarial
//! corruption, with an aligned LiDAR range as the consistency reference.

pub mod align;
pub mod attack;
pub mod baselines;
pub mod closedloop;
pub mod data;
pub mod error;
pub mod forecast;
pub mod gatefuse;
pub mod metrics;
pub mod pipeline;
pub mod repair;
pub mod results;
pub mod synth;

pub use error::{Error, Result};
