//! Core building blocks for dense 2D image registration: images and Netpbm
//! I/O, displacement fields, similarity metrics, phase correlation, a
//! multi-resolution diffeomorphic demons baseline and a synthetic pair
//! generator.
//!
//! Numeric containers are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod dataset;
pub mod demons;
pub mod error;
pub mod image;
pub mod metrics;
pub mod netpbm;
pub mod rigid;
pub mod rng;
pub mod scalar;
pub mod warpfield;

pub use error::{Error, Result};
pub use image::Image;
pub use metrics::{LossWeights, SsimParams};
pub use scalar::Scalar;
pub use warpfield::WarpField;

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Field32 = WarpField<f32>;
pub type Field64 = WarpField<f64>;
pub type Dataset32 = dataset::Dataset<f32>;
