//! Continuous geometry-aware deep-learning reduced order models.
//!
//! The crate trains a coordinate network of geometry-conditioned basis
//! functions together with an autoencoder and a reduced network on
//! point-cloud snapshots whose resolution may vary per geometry, and
//! provides a POD baseline with the SVD identities used to check it.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod pod;
pub mod training;

pub use error::{Error, Result};
