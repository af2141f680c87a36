//! One-step MeanFlow policies trained from critic gradients.

pub mod analysis;
pub mod cli;
pub mod critic;
pub mod envs;
pub mod error;
pub mod meanflow;
pub mod net;
pub mod schedules;
pub mod score;
pub mod selftest;
pub mod trainer;

pub use error::{Error, Result};
