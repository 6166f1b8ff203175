//! Activation-normalization layers with a minimal trainable network engine.
//!
//! The crate implements the classical normalization family — batch (Ioffe &
//! Szegedy, 2015), layer (Ba et al., 2016), instance (Ulyanov et al., 2016)
//! and group (Wu & He, 2018) normalization — plus two mixture-based layers:
//! mixture normalization over an EM-fitted Gaussian mixture (Kalayeh & Shah,
//! 2019) and unsupervised adaptive normalization, whose cluster parameters
//! are themselves trainable (by backpropagation or by a moving average).
//! Every layer ships an exact backward pass verified against central finite
//! differences, and a small layer/optimizer/data stack makes the layers
//! trainable end to end at desk scale.

pub mod data;
pub mod error;
pub mod gmm;
pub mod gradcheck;
pub mod layers;
pub mod norm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
