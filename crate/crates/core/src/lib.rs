//! Caption-code bridging for image captioning at desk scale.
//!
//! A text auto-encoder compresses captions into fixed-length codes. A small
//! projector maps mean-pooled region features into that code space under a
//! selectable modality loss, and an LSTM decoder generates captions from the
//! projected code, trained on cross-entropy plus the modality loss. The
//! crate also carries a seeded synthetic scene corpus, the caption metrics,
//! and a versioned checkpoint format.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar type.

pub mod batching;
pub mod captioner;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod metrics;
pub mod mtm;
pub mod numcore;
pub mod scalar;
pub mod synthdata;
pub mod textae;
pub mod vocab;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type AutoEncoder64 = textae::AutoEncoder<f64>;
pub type AutoEncoder32 = textae::AutoEncoder<f32>;
pub type Mtm64 = mtm::Mtm<f64>;
pub type Mtm32 = mtm::Mtm<f32>;
pub type CaptionModel64 = captioner::CaptionModel<f64>;
pub type CaptionModel32 = captioner::CaptionModel<f32>;
pub type RegionFeatures64 = mtm::RegionFeatures<f64>;
pub type RegionFeatures32 = mtm::RegionFeatures<f32>;
