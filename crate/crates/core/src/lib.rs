//! Causally disentangled variational autoencoder for implicit-feedback
//! recommendation.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod objective;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
