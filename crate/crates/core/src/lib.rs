//! Lung-ultrasound screening: a portable CNN inference engine with VGG-16
//! classifier and U-Net segmenter builders, plus preprocessing, augmentation,
//! grouped cross-validation, head fine-tuning, metrics, overlays and an
//! edge-latency benchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for storage and inference,
//! `f64` for gradient verification). The aliases below name the common
//! concrete instantiations.

pub mod arch;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod training;
pub mod weights;

pub use arch::{BoundModel, ModelGraph, UnetConfig, Vgg16Config};
pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;
pub use tensor::{Conv2dParams, Tensor};
pub use weights::{WeightArchive, WeightTensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type BoundModel32 = BoundModel<f32>;
pub type BoundModel64 = BoundModel<f64>;
