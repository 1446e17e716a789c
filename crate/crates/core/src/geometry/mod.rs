//! Parametrized domains, their maps onto a reference domain, and quadrature
//! clouds.

mod cloud;
mod family;
mod quadrature;

pub use cloud::{grid_factorization, reference_cloud, sample_cloud, PointCloud, SamplingMode};
pub use family::{DiffeomorphismSpec, Family};
pub use quadrature::{morph_pullback, weighted_inner_product};
