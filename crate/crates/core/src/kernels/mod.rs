//! Convolution, resampling, pooling and loss primitives with analytic backward passes.

mod conv;
mod counting;
mod loss;
mod pool;
mod resample;
mod spec;

pub use conv::{
    conv3d_channelwise, conv3d_channelwise_counted, conv3d_pointwise, conv3d_pointwise_counted, conv3d_separable,
    conv3d_separable_counted, conv3d_standard, conv3d_standard_counted, conv_backward, conv_forward, conv_r2plus1d,
    conv_r2plus1d_counted, m_prime, ConvKind, GradBundle, WeightSet,
};
pub(crate) use conv::{spatial_stage, temporal_stage};
pub use counting::{measured_macs, CountMode, CountingContext};
pub use loss::{argmax_classes, softmax_ce_loss};
pub use pool::{avg_pool_spatial_full, avg_pool_spatial_full_backward, broadcast_spatial, broadcast_spatial_backward};
pub use resample::{
    resize_nearest_labels, resize_trilinear, resize_trilinear_backward, trilinear_upsample, trilinear_upsample_backward,
};
pub use spec::{ConvSpec, Padding};

use crate::tensor::ClipTensor;

pub fn relu(x: &ClipTensor) -> ClipTensor {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`] given its forward output.
pub fn relu_backward(output: &ClipTensor, grad_out: &ClipTensor) -> ClipTensor {
    let data = output.data().iter().zip(grad_out.data()).map(|(&y, &g)| if y > 0.0 { g } else { 0.0 }).collect();
    ClipTensor::from_vec(grad_out.shape(), data).expect("relu gradient shape")
}
