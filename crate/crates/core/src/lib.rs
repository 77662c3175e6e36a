//! Simulator for one-bit supervision: a model guesses a sample's class and a
//! labeler answers yes or no, at one bit per answer instead of `log2 C` bits
//! per full label.

pub mod annotation;
pub mod data;
pub mod error;
pub mod model;
pub mod orchestrator;
pub mod report;
pub mod sampling;
pub mod theory;

pub use error::{Error, Result};
