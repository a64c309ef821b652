//! Single-image blind denoising by training a small convolutional network
//! on checkerboard-downsampled halves of the noisy image itself.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod downsample;
pub mod error;
pub mod imaging;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use downsample::{DownsamplePair, PairScheme, Plane};
pub use error::{Error, Result};
pub use model::{build_network, Network};
pub use tensor::{Real, Tensor};
pub use trainer::{denoise_image, train_single_channel, DenoiseResult, Loss, Scheme, StopReason, TrainConfig};
