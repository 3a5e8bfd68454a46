//! Multi-scenario click-through-rate modeling with hierarchical
//! scenario-conditioned dynamic layers.

pub mod checkpoint;
pub mod data;
pub mod dynamic;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
