//! Brute-force reference implementations and finite-difference helpers.
//!
//! Everything here is written directly from the operator definitions with
//! plain index arithmetic and does not call into the library's kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepconv3d::kernels::{ConvKind, ConvSpec, Padding, WeightSet};
use sepconv3d::network::{ConvVariant, DecoderConfig, DecoderStage, EncoderBlock, NetworkConfig, PyramidConfig};
use sepconv3d::{Array, ClipTensor, TensorShape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_clip(rng: &mut impl Rng, h: usize, w: usize, t: usize, c: usize) -> ClipTensor {
    let shape = TensorShape::new(h, w, t, c).unwrap();
    let data = (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ClipTensor::from_vec(shape, data).unwrap()
}

pub fn random_array(rng: &mut impl Rng, dims: &[usize]) -> Array {
    let n = dims.iter().product();
    Array::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Per-axis output extent.
fn axis(input: usize, k: usize, stride: usize, dil: usize, padding: Padding) -> usize {
    let extent = (k - 1) * dil + 1;
    match padding {
        Padding::Same => input.div_ceil(stride),
        Padding::Valid => (input - extent) / stride + 1,
    }
}

fn pad_of(k: usize, dil: usize, padding: Padding) -> isize {
    match padding {
        Padding::Same => (((k - 1) * dil) / 2) as isize,
        Padding::Valid => 0,
    }
}

fn fetch(x: &ClipTensor, h: isize, w: isize, t: isize, c: usize) -> f64 {
    let s = x.shape();
    if h < 0 || w < 0 || t < 0 || h >= s.h as isize || w >= s.w as isize || t >= s.t as isize {
        0.0
    } else {
        x.data()[((h as usize * s.w + w as usize) * s.t + t as usize) * s.c + c]
    }
}

/// Direct six-loop 3D convolution with zero padding.
pub fn conv_standard_oracle(x: &ClipTensor, k: &Array, bias: Option<&[f64]>, spec: &ConvSpec) -> ClipTensor {
    let s = x.shape();
    let [kh, kw, kt] = spec.kernel;
    let (m, n) = (spec.channels_in, spec.channels_out);
    let dil = [spec.spatial_dilation, spec.spatial_dilation, spec.temporal_dilation];
    let ho = axis(s.h, kh, spec.stride[0], dil[0], spec.padding);
    let wo = axis(s.w, kw, spec.stride[1], dil[1], spec.padding);
    let to = axis(s.t, kt, spec.stride[2], dil[2], spec.padding);
    let ph = pad_of(kh, dil[0], spec.padding);
    let pw = pad_of(kw, dil[1], spec.padding);
    let pt = pad_of(kt, dil[2], spec.padding);
    let out_shape = TensorShape::new(ho, wo, to, n).unwrap();
    let mut out = ClipTensor::zeros(out_shape);
    for oh in 0..ho {
        for ow in 0..wo {
            for ot in 0..to {
                for nn in 0..n {
                    let mut acc = bias.map_or(0.0, |b| b[nn]);
                    for i in 0..kh {
                        for j in 0..kw {
                            for kk in 0..kt {
                                for mm in 0..m {
                                    let ih = (oh * spec.stride[0]) as isize + (i * dil[0]) as isize - ph;
                                    let iw = (ow * spec.stride[1]) as isize + (j * dil[1]) as isize - pw;
                                    let it = (ot * spec.stride[2]) as isize + (kk * dil[2]) as isize - pt;
                                    let wv = k.data()[(((i * kw + j) * kt + kk) * m + mm) * n + nn];
                                    acc += wv * fetch(x, ih, iw, it, mm);
                                }
                            }
                        }
                    }
                    out.set(oh, ow, ot, nn, acc);
                }
            }
        }
    }
    out
}

/// Dilated channel-wise convolution written term by term:
/// `G[h,w,t,m] = Σ_{i,j,k} K[i,j,k,m] · F[h + γ_s·i, w + γ_s·j, t + γ_t·k, m]`
/// with the tap grid centred and zero padding outside the input.
pub fn conv_channelwise_oracle(x: &ClipTensor, k: &Array, spec: &ConvSpec) -> ClipTensor {
    let s = x.shape();
    let [kh, kw, kt] = spec.kernel;
    let (gs, gt) = (spec.spatial_dilation, spec.temporal_dilation);
    let ho = axis(s.h, kh, spec.stride[0], gs, spec.padding);
    let wo = axis(s.w, kw, spec.stride[1], gs, spec.padding);
    let to = axis(s.t, kt, spec.stride[2], gt, spec.padding);
    let (ch, cw, ct) = (pad_of(kh, gs, spec.padding), pad_of(kw, gs, spec.padding), pad_of(kt, gt, spec.padding));
    let mut out = ClipTensor::zeros(TensorShape::new(ho, wo, to, s.c).unwrap());
    for h in 0..ho {
        for w in 0..wo {
            for t in 0..to {
                for m in 0..s.c {
                    let mut acc = 0.0;
                    for i in 0..kh {
                        for j in 0..kw {
                            for kk in 0..kt {
                                let fh = (h * spec.stride[0] + gs * i) as isize - ch;
                                let fw = (w * spec.stride[1] + gs * j) as isize - cw;
                                let ft = (t * spec.stride[2] + gt * kk) as isize - ct;
                                acc += k.data()[((i * kw + j) * kt + kk) * s.c + m] * fetch(x, fh, fw, ft, m);
                            }
                        }
                    }
                    out.set(h, w, t, m, acc);
                }
            }
        }
    }
    out
}

/// Per-site `x · P (+ b)`.
pub fn conv_pointwise_oracle(x: &ClipTensor, p: &Array, bias: Option<&[f64]>) -> ClipTensor {
    let s = x.shape();
    let (m, n) = (p.dims()[0], p.dims()[1]);
    let mut out = ClipTensor::zeros(s.with_channels(n));
    for h in 0..s.h {
        for w in 0..s.w {
            for t in 0..s.t {
                for nn in 0..n {
                    let mut acc = bias.map_or(0.0, |b| b[nn]);
                    for mm in 0..m {
                        acc += x.get(h, w, t, mm) * p.data()[mm * n + nn];
                    }
                    out.set(h, w, t, nn, acc);
                }
            }
        }
    }
    out
}

/// Full kernel `K[i,j,k,m,n] = K̂[i,j,k,m] · P[m,n]` equivalent to a separable pair.
pub fn assemble_separable(channelwise: &Array, pointwise: &Array) -> Array {
    let d = channelwise.dims();
    let (taps, m) = (d[0] * d[1] * d[2], d[3]);
    let n = pointwise.dims()[1];
    let mut data = vec![0.0; taps * m * n];
    for tap in 0..taps {
        for mm in 0..m {
            for nn in 0..n {
                data[(tap * m + mm) * n + nn] = channelwise.data()[tap * m + mm] * pointwise.data()[mm * n + nn];
            }
        }
    }
    Array::from_vec(&[d[0], d[1], d[2], m, n], data).unwrap()
}

pub fn conv_separable_oracle(
    x: &ClipTensor,
    cw: &Array,
    pw: &Array,
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> ClipTensor {
    conv_standard_oracle(x, &assemble_separable(cw, pw), bias, spec)
}

/// Spatial `(K_h, K_w, 1)` stage then temporal `(1, 1, K_t)` stage, both via the standard oracle.
pub fn conv_r2plus1d_oracle(
    x: &ClipTensor,
    sp: &Array,
    tp: &Array,
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> ClipTensor {
    let mp = sp.dims()[4];
    let s_spec = ConvSpec {
        kernel: [spec.kernel[0], spec.kernel[1], 1],
        channels_in: spec.channels_in,
        channels_out: mp,
        spatial_dilation: spec.spatial_dilation,
        temporal_dilation: 1,
        stride: [spec.stride[0], spec.stride[1], 1],
        padding: spec.padding,
    };
    let t_spec = ConvSpec {
        kernel: [1, 1, spec.kernel[2]],
        channels_in: mp,
        channels_out: spec.channels_out,
        spatial_dilation: 1,
        temporal_dilation: spec.temporal_dilation,
        stride: [1, 1, spec.stride[2]],
        padding: spec.padding,
    };
    let mid = conv_standard_oracle(x, sp, None, &s_spec);
    conv_standard_oracle(&mid, tp, bias, &t_spec)
}

/// Trilinear resize, align-corners = false, evaluated coordinate by coordinate.
pub fn trilinear_oracle(x: &ClipTensor, size: [usize; 3]) -> ClipTensor {
    let s = x.shape();
    let src = |o: usize, input: usize, output: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
        let lo = (p.floor() as usize).min(input - 1);
        let hi = if lo + 1 < input { lo + 1 } else { lo };
        (lo, hi, if hi == lo { 0.0 } else { p - lo as f64 })
    };
    let mut out = ClipTensor::zeros(TensorShape::new(size[0], size[1], size[2], s.c).unwrap());
    for h in 0..size[0] {
        let (h0, h1, a) = src(h, s.h, size[0]);
        for w in 0..size[1] {
            let (w0, w1, b) = src(w, s.w, size[1]);
            for t in 0..size[2] {
                let (t0, t1, g) = src(t, s.t, size[2]);
                for c in 0..s.c {
                    let mut v = 0.0;
                    for (hh, wh) in [(h0, 1.0 - a), (h1, a)] {
                        for (ww, wwt) in [(w0, 1.0 - b), (w1, b)] {
                            for (tt, wt) in [(t0, 1.0 - g), (t1, g)] {
                                v += wh * wwt * wt * x.get(hh, ww, tt, c);
                            }
                        }
                    }
                    out.set(h, w, t, c, v);
                }
            }
        }
    }
    out
}

/// Spatial mean per `(t, c)`.
pub fn avg_pool_oracle(x: &ClipTensor) -> ClipTensor {
    let s = x.shape();
    let mut out = ClipTensor::zeros(TensorShape::new(1, 1, s.t, s.c).unwrap());
    for t in 0..s.t {
        for c in 0..s.c {
            let mut sum = 0.0;
            for h in 0..s.h {
                for w in 0..s.w {
                    sum += x.get(h, w, t, c);
                }
            }
            out.set(0, 0, t, c, sum / (s.h * s.w) as f64);
        }
    }
    out
}

/// Central finite difference of a scalar function of a flat parameter vector.
pub fn central_diff(params: &mut [f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        let plus = f(params);
        params[i] = orig - step;
        let minus = f(params);
        params[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(1e-12f64, |m, v| m.max(v.abs()));
    diff / scale
}

pub fn random_weights(r: &mut impl Rng, kind: ConvKind, spec: &ConvSpec, mp: usize, bias: bool) -> WeightSet {
    let mut w = WeightSet::zeros(kind, spec, mp, bias);
    for a in w.arrays_mut() {
        for v in a.data_mut() {
            *v = r.random_range(-1.0..1.0);
        }
    }
    w
}

/// Nested-loop reference for any weight variant.
pub fn oracle_for(x: &ClipTensor, weights: &WeightSet, spec: &ConvSpec) -> ClipTensor {
    match weights {
        WeightSet::Standard { kernel, bias } => conv_standard_oracle(x, kernel, bias.as_ref().map(|b| b.data()), spec),
        WeightSet::Channelwise { kernel } => conv_channelwise_oracle(x, kernel, spec),
        WeightSet::Pointwise { matrix, bias } => conv_pointwise_oracle(x, matrix, bias.as_ref().map(|b| b.data())),
        WeightSet::Separable { channelwise, pointwise, bias } => {
            conv_separable_oracle(x, channelwise, pointwise, bias.as_ref().map(|b| b.data()), spec)
        }
        WeightSet::R2plus1d { spatial, temporal, bias } => {
            conv_r2plus1d_oracle(x, spatial, temporal, bias.as_ref().map(|b| b.data()), spec)
        }
    }
}

pub const KINDS: [ConvKind; 5] =
    [ConvKind::Standard, ConvKind::Channelwise, ConvKind::Pointwise, ConvKind::Separable, ConvKind::R2plus1d];

/// Forces the channel and kernel constraints of `kind` onto `spec`.
pub fn adapt(kind: ConvKind, spec: ConvSpec) -> ConvSpec {
    match kind {
        ConvKind::Channelwise => ConvSpec { channels_out: spec.channels_in, ..spec },
        ConvKind::Pointwise => ConvSpec::pointwise(spec.channels_in, spec.channels_out),
        _ => spec,
    }
}

pub fn with_array(weights: &WeightSet, idx: usize, values: &[f64]) -> WeightSet {
    let mut w = weights.clone();
    w.arrays_mut()[idx].data_mut().copy_from_slice(values);
    w
}

/// Network with every dim at most 6: one encoder block, a one-rate pyramid
/// with unit and frame-features branches, one decoder stage skipping from the input.
pub fn micro_network(variant: ConvVariant, temporal: bool) -> NetworkConfig {
    let (block, scale) =
        if temporal { (EncoderBlock::new(3, 2, 2, 2), [2, 2, 2]) } else { (EncoderBlock::new(3, 2, 1, 1), [2, 2, 1]) };
    NetworkConfig {
        input_channels: 2,
        classes: 2,
        conv_variant: variant,
        temporal_dilation: true,
        encoder: vec![block],
        pyramid: PyramidConfig {
            spatial_rates: vec![1],
            kernel: 3,
            include_unit_branch: true,
            include_frame_features: true,
            branch_channels: Some(2),
            fuse_channels: Some(3),
        },
        decoder: DecoderConfig {
            stages: vec![DecoderStage { scale, skip: Some(0), skip_channels: 2, channels: 3, kernel: 3 }],
            output_scale: [1, 1, 1],
        },
        action: None,
    }
}
