//! Trilinear resampling (align-corners = false) and its transpose.

use crate::error::{Error, Result};
use crate::tensor::{ClipTensor, TensorShape};

/// Interpolation taps along one axis: `(lo, hi, weight of hi)`.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            (lo, hi, frac)
        })
        .collect()
}

/// Resizes the `(H, W, T)` extents of every sample to `size`.
pub fn resize_trilinear(input: &ClipTensor, size: [usize; 3]) -> Result<ClipTensor> {
    if size.contains(&0) {
        return Err(Error::Shape(format!("resize target {size:?} has a zero extent")));
    }
    let s = input.shape();
    let out_shape = TensorShape { h: size[0], w: size[1], t: size[2], ..s };
    let (th, tw, tt) = (axis_taps(s.h, size[0]), axis_taps(s.w, size[1]), axis_taps(s.t, size[2]));
    let c = s.c;
    let mut out = Vec::with_capacity(out_shape.numel());
    for sample in input.data().chunks(s.sample_len()) {
        let at = |h: usize, w: usize, t: usize| ((h * s.w + w) * s.t + t) * c;
        for &(h0, h1, fh) in &th {
            for &(w0, w1, fw) in &tw {
                for &(t0, t1, ft) in &tt {
                    let corners = [
                        (at(h0, w0, t0), (1.0 - fh) * (1.0 - fw) * (1.0 - ft)),
                        (at(h0, w0, t1), (1.0 - fh) * (1.0 - fw) * ft),
                        (at(h0, w1, t0), (1.0 - fh) * fw * (1.0 - ft)),
                        (at(h0, w1, t1), (1.0 - fh) * fw * ft),
                        (at(h1, w0, t0), fh * (1.0 - fw) * (1.0 - ft)),
                        (at(h1, w0, t1), fh * (1.0 - fw) * ft),
                        (at(h1, w1, t0), fh * fw * (1.0 - ft)),
                        (at(h1, w1, t1), fh * fw * ft),
                    ];
                    for ch in 0..c {
                        out.push(corners.iter().map(|&(base, wgt)| wgt * sample[base + ch]).sum());
                    }
                }
            }
        }
    }
    ClipTensor::from_vec(out_shape, out)
}

/// Transpose of [`resize_trilinear`]: scatters `grad_out` back onto an input
/// of shape `input_shape` with the same interpolation weights.
pub fn resize_trilinear_backward(grad_out: &ClipTensor, input_shape: TensorShape) -> Result<ClipTensor> {
    let g = grad_out.shape();
    if g.c != input_shape.c || g.batch_len() != input_shape.batch_len() {
        return Err(Error::Mismatch(format!("gradient {g} vs input {input_shape}")));
    }
    let s = input_shape;
    let (th, tw, tt) = (axis_taps(s.h, g.h), axis_taps(s.w, g.w), axis_taps(s.t, g.t));
    let c = s.c;
    let mut grad_in = vec![0.0; s.numel()];
    for (gi, go) in grad_in.chunks_mut(s.sample_len()).zip(grad_out.data().chunks(g.sample_len())) {
        let at = |h: usize, w: usize, t: usize| ((h * s.w + w) * s.t + t) * c;
        let mut idx = 0;
        for &(h0, h1, fh) in &th {
            for &(w0, w1, fw) in &tw {
                for &(t0, t1, ft) in &tt {
                    let corners = [
                        (at(h0, w0, t0), (1.0 - fh) * (1.0 - fw) * (1.0 - ft)),
                        (at(h0, w0, t1), (1.0 - fh) * (1.0 - fw) * ft),
                        (at(h0, w1, t0), (1.0 - fh) * fw * (1.0 - ft)),
                        (at(h0, w1, t1), (1.0 - fh) * fw * ft),
                        (at(h1, w0, t0), fh * (1.0 - fw) * (1.0 - ft)),
                        (at(h1, w0, t1), fh * (1.0 - fw) * ft),
                        (at(h1, w1, t0), fh * fw * (1.0 - ft)),
                        (at(h1, w1, t1), fh * fw * ft),
                    ];
                    for ch in 0..c {
                        let gv = go[idx + ch];
                        for &(base, wgt) in &corners {
                            gi[base + ch] += wgt * gv;
                        }
                    }
                    idx += c;
                }
            }
        }
    }
    ClipTensor::from_vec(s, grad_in)
}

/// Upsamples by integer factors `(r_h, r_w, r_t)`.
pub fn trilinear_upsample(input: &ClipTensor, scale: [usize; 3]) -> Result<ClipTensor> {
    if scale.contains(&0) {
        return Err(Error::Shape(format!("upsample factors {scale:?} must be at least 1")));
    }
    let s = input.shape();
    resize_trilinear(input, [s.h * scale[0], s.w * scale[1], s.t * scale[2]])
}

pub fn trilinear_upsample_backward(grad_out: &ClipTensor, input_shape: TensorShape) -> Result<ClipTensor> {
    resize_trilinear_backward(grad_out, input_shape)
}

/// Nearest-neighbour resize of an integer label map laid out `(H, W, T)`.
pub fn resize_nearest_labels(labels: &[usize], dims: [usize; 3], size: [usize; 3]) -> Vec<usize> {
    let pick = |input: usize, output: usize| -> Vec<usize> {
        let scale = input as f64 / output as f64;
        (0..output).map(|o| (((o as f64 + 0.5) * scale).floor() as usize).min(input - 1)).collect()
    };
    let (ph, pw, pt) = (pick(dims[0], size[0]), pick(dims[1], size[1]), pick(dims[2], size[2]));
    let mut out = Vec::with_capacity(size.iter().product());
    for &h in &ph {
        for &w in &pw {
            for &t in &pt {
                out.push(labels[(h * dims[1] + w) * dims[2] + t]);
            }
        }
    }
    out
}
