//! Conditional SRGAN-style enhancement of band-limited, noisy seismic
//! images: synthetic data, networks, training, metrics and file formats.
//!
//! Everything numeric is generic over [`tensorcore::Scalar`] (`f32` or
//! `f64`); the aliases below name the common instantiations.

pub mod error;
pub mod gannet;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synthdata;
pub mod tensorcore;
pub mod training;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{ConditionField, ConditionMode, Volume};

pub type Tensor32 = tensorcore::Tensor<f32>;
pub type Tensor64 = tensorcore::Tensor<f64>;
pub type Volume32 = Volume<f32>;
pub type Volume64 = Volume<f64>;
pub type ConditionField32 = ConditionField<f32>;
pub type Network32 = gannet::Network<f32>;
pub type Network64 = gannet::Network<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Dataset32 = training::Dataset<f32>;
