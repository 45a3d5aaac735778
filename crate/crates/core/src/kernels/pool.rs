use crate::error::{Error, Result};
use crate::tensor::{ClipTensor, TensorShape};

/// Averages over the full `H × W` extent, keeping `T` and `C`.
pub fn avg_pool_spatial_full(input: &ClipTensor) -> ClipTensor {
    let s = input.shape();
    let out_shape = TensorShape { h: 1, w: 1, ..s };
    let plane = s.t * s.c;
    let inv = 1.0 / (s.h * s.w) as f64;
    let mut out = Vec::with_capacity(out_shape.numel());
    for sample in input.data().chunks(s.sample_len()) {
        let mut acc = vec![0.0; plane];
        for row in sample.chunks_exact(plane) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        out.extend(acc.into_iter().map(|v| v * inv));
    }
    ClipTensor::from_vec(out_shape, out).expect("pooled shape")
}

/// Gradient of [`avg_pool_spatial_full`].
pub fn avg_pool_spatial_full_backward(grad_out: &ClipTensor, input_shape: TensorShape) -> Result<ClipTensor> {
    let pooled = broadcast_spatial(grad_out, input_shape.h, input_shape.w)?;
    Ok(pooled.scale(1.0 / (input_shape.h * input_shape.w) as f64))
}

/// Tiles a `1 × 1 × T × C` tensor back to `H × W × T × C`.
pub fn broadcast_spatial(pooled: &ClipTensor, h: usize, w: usize) -> Result<ClipTensor> {
    let s = pooled.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Shape(format!("broadcast expects 1x1 spatial extent, got {s}")));
    }
    let out_shape = TensorShape { h, w, ..s };
    let mut out = Vec::with_capacity(out_shape.numel());
    for sample in pooled.data().chunks(s.sample_len()) {
        for _ in 0..h * w {
            out.extend_from_slice(sample);
        }
    }
    ClipTensor::from_vec(out_shape, out)
}

/// Gradient of [`broadcast_spatial`]: sums over the spatial extent.
pub fn broadcast_spatial_backward(grad_out: &ClipTensor) -> ClipTensor {
    let s = grad_out.shape();
    avg_pool_spatial_full(grad_out).scale((s.h * s.w) as f64)
}
