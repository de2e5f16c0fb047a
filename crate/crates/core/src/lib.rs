//! Coupled Real World / Ideal World training.
//!
//! The same model and optimizer are trained twice: once on a fixed train set
//! of `n` samples that is revisited every epoch, and once on a fresh stream of
//! samples from the population. The difference in test soft-error at equal
//! step counts is the bootstrap gap ε.

pub mod distributions;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod optimizers;
pub mod rng;
pub mod toy;
pub mod worlds;

pub use error::{Error, Result};
