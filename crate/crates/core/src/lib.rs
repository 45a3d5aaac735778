//! 3D convolution variants (standard, dilated channel-wise, point-wise,
//! separable, R(2+1)D), an analytic cost model, and a small encoder / pyramid
//! pooling / decoder network for video object segmentation.

pub mod cli;
pub mod cost;
pub mod error;
pub mod format;
pub mod kernels;
pub mod network;
pub mod postproc;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Array, ClipTensor, TensorShape};
