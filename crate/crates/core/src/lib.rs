//! Graph-transformer surrogate for pulsatile blood flow in vessels with an
//! aneurysm-like bulge.
//!
//! The crate covers the whole pipeline: synthetic tetrahedral cases and
//! their binary formats ([`meshio`]), graph construction with augmented
//! attention masks ([`graph`]), a small reverse-mode kernel set with sparse
//! masked attention ([`tensor`]), the encode-process-decode transformer
//! ([`model`]), training and scaling-law tooling ([`train`]), autoregressive
//! rollout and error metrics ([`rollout`]) and wall-shear post-processing
//! with rule-based risk scoring ([`hemo`]).
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the two
//! precisions used in practice.

pub mod error;
pub mod geom;
pub mod graph;
pub mod hemo;
pub mod meshio;
pub mod model;
pub mod rollout;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor2<f32>;
pub type Tensor64 = tensor::Tensor2<f64>;
pub type Model = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type Trainer = train::Trainer<f32>;
pub type Trainer64 = train::Trainer<f64>;
