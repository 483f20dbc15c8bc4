//! Point-cloud autoencoders whose decoder folds a 2D primitive into 3D, tears
//! the primitive's grid graph to match the target topology, folds again and
//! graph-filters the result.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` for training, `f64`
//! for gradient checks and oracles); the aliases below pin the common cases.

pub mod cloud;
pub mod data;
pub mod downstream;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod nets;
pub mod numeric;
pub mod train;

pub use cloud::PointCloud3;
pub use error::{Error, Result};
pub use nets::{Model, ModelConfig, Variant};
pub use numeric::{Scalar, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Cloud32 = PointCloud3<f32>;
pub type Cloud64 = PointCloud3<f64>;
