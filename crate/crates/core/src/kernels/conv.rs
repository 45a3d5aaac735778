//! Convolution variants and their analytic backward passes.
//!
//! All kernels read `(H, W, T, C)` clip tensors. Weight layouts:
//!
//! | variant      | arrays                                                  |
//! |--------------|---------------------------------------------------------|
//! | standard     | `[K_h, K_w, K_t, M, N]`                                 |
//! | channel-wise | `[K_h, K_w, K_t, M]`                                    |
//! | point-wise   | `[M, N]`                                                |
//! | separable    | channel-wise `[K_h, K_w, K_t, M]` + point-wise `[M, N]` |
//! | R(2+1)D      | spatial `[K_h, K_w, 1, M, M′]` + temporal `[1, 1, K_t, M′, N]` |
//!
//! Biases are `[N]`. Parallel workers split the output by rows (or by weight
//! taps in the weight-gradient passes), so each element is always summed in
//! the same order.

use rayon::prelude::*;

use super::counting::{CountMode, CountingContext};
use super::spec::{AxisGeometry, ConvSpec};
use crate::error::{Error, Result};
use crate::tensor::{Array, ClipTensor, TensorShape};

/// Weights for one convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSet {
    Standard { kernel: Array, bias: Option<Array> },
    Channelwise { kernel: Array },
    Pointwise { matrix: Array, bias: Option<Array> },
    Separable { channelwise: Array, pointwise: Array, bias: Option<Array> },
    R2plus1d { spatial: Array, temporal: Array, bias: Option<Array> },
}

impl WeightSet {
    /// All-zero weights shaped for `spec`. `m_prime` is only used by R(2+1)D.
    pub fn zeros(kind: ConvKind, spec: &ConvSpec, m_prime: usize, bias: bool) -> Self {
        let [kh, kw, kt] = spec.kernel;
        let (m, n) = (spec.channels_in, spec.channels_out);
        let b = bias.then(|| Array::zeros(&[n]));
        match kind {
            ConvKind::Standard => WeightSet::Standard { kernel: Array::zeros(&[kh, kw, kt, m, n]), bias: b },
            ConvKind::Channelwise => WeightSet::Channelwise { kernel: Array::zeros(&[kh, kw, kt, m]) },
            ConvKind::Pointwise => WeightSet::Pointwise { matrix: Array::zeros(&[m, n]), bias: b },
            ConvKind::Separable => WeightSet::Separable {
                channelwise: Array::zeros(&[kh, kw, kt, m]),
                pointwise: Array::zeros(&[m, n]),
                bias: b,
            },
            ConvKind::R2plus1d => WeightSet::R2plus1d {
                spatial: Array::zeros(&[kh, kw, 1, m, m_prime]),
                temporal: Array::zeros(&[1, 1, kt, m_prime, n]),
                bias: b,
            },
        }
    }

    pub fn kind(&self) -> ConvKind {
        match self {
            WeightSet::Standard { .. } => ConvKind::Standard,
            WeightSet::Channelwise { .. } => ConvKind::Channelwise,
            WeightSet::Pointwise { .. } => ConvKind::Pointwise,
            WeightSet::Separable { .. } => ConvKind::Separable,
            WeightSet::R2plus1d { .. } => ConvKind::R2plus1d,
        }
    }

    /// Arrays in a fixed order (kernels first, bias last).
    pub fn arrays(&self) -> Vec<&Array> {
        match self {
            WeightSet::Standard { kernel, bias } => std::iter::once(kernel).chain(bias).collect(),
            WeightSet::Channelwise { kernel } => vec![kernel],
            WeightSet::Pointwise { matrix, bias } => std::iter::once(matrix).chain(bias).collect(),
            WeightSet::Separable { channelwise, pointwise, bias } => {
                [channelwise, pointwise].into_iter().chain(bias).collect()
            }
            WeightSet::R2plus1d { spatial, temporal, bias } => [spatial, temporal].into_iter().chain(bias).collect(),
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array> {
        match self {
            WeightSet::Standard { kernel, bias } => std::iter::once(kernel).chain(bias).collect(),
            WeightSet::Channelwise { kernel } => vec![kernel],
            WeightSet::Pointwise { matrix, bias } => std::iter::once(matrix).chain(bias).collect(),
            WeightSet::Separable { channelwise, pointwise, bias } => {
                [channelwise, pointwise].into_iter().chain(bias).collect()
            }
            WeightSet::R2plus1d { spatial, temporal, bias } => [spatial, temporal].into_iter().chain(bias).collect(),
        }
    }

    /// Names matching [`WeightSet::arrays`].
    pub fn array_names(&self) -> Vec<&'static str> {
        let (mut names, bias) = match self {
            WeightSet::Standard { bias, .. } => (vec!["kernel"], bias.is_some()),
            WeightSet::Channelwise { .. } => (vec!["kernel"], false),
            WeightSet::Pointwise { bias, .. } => (vec!["matrix"], bias.is_some()),
            WeightSet::Separable { bias, .. } => (vec!["channelwise", "pointwise"], bias.is_some()),
            WeightSet::R2plus1d { bias, .. } => (vec!["spatial", "temporal"], bias.is_some()),
        };
        if bias {
            names.push("bias");
        }
        names
    }

    pub fn parameter_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvKind {
    Standard,
    Channelwise,
    Pointwise,
    Separable,
    R2plus1d,
}

impl ConvKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvKind::Standard => "standard",
            ConvKind::Channelwise => "channelwise",
            ConvKind::Pointwise => "pointwise",
            ConvKind::Separable => "separable",
            ConvKind::R2plus1d => "r2plus1d",
        }
    }
}

impl std::fmt::Display for ConvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Gradients of one kernel invocation; `weights` mirrors the forward weight set.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub input: ClipTensor,
    pub weights: WeightSet,
}

/// Intermediate channel count that gives R(2+1)D the same parameter count as
/// the standard kernel: `M·N·K_t·K_h·K_w / (N·K_t + M·K_h·K_w)`, rounded half
/// up, at least 1.
pub fn m_prime(spec: &ConvSpec) -> usize {
    let [kh, kw, kt] = spec.kernel;
    let (m, n) = (spec.channels_in as u128, spec.channels_out as u128);
    let (kh, kw, kt) = (kh as u128, kw as u128, kt as u128);
    let num = m * n * kt * kh * kw;
    let den = n * kt + m * kh * kw;
    // round(num / den) with halves going up
    let rounded = (2 * num + den) / (2 * den);
    rounded.max(1) as usize
}

pub(crate) fn spatial_stage(spec: &ConvSpec, m_prime: usize) -> ConvSpec {
    ConvSpec {
        kernel: [spec.kernel[0], spec.kernel[1], 1],
        channels_in: spec.channels_in,
        channels_out: m_prime,
        spatial_dilation: spec.spatial_dilation,
        temporal_dilation: 1,
        stride: [spec.stride[0], spec.stride[1], 1],
        padding: spec.padding,
    }
}

pub(crate) fn temporal_stage(spec: &ConvSpec, m_prime: usize) -> ConvSpec {
    ConvSpec {
        kernel: [1, 1, spec.kernel[2]],
        channels_in: m_prime,
        channels_out: spec.channels_out,
        spatial_dilation: 1,
        temporal_dilation: spec.temporal_dilation,
        stride: [1, 1, spec.stride[2]],
        padding: spec.padding,
    }
}

fn channelwise_spec_of(spec: &ConvSpec) -> ConvSpec {
    ConvSpec { channels_out: spec.channels_in, ..*spec }
}

// ---------------------------------------------------------------------------
// public entry points

pub fn conv3d_standard(
    input: &ClipTensor,
    kernel: &Array,
    bias: Option<&Array>,
    spec: &ConvSpec,
) -> Result<ClipTensor> {
    conv3d_standard_counted(input, kernel, bias, spec, None)
}

pub fn conv3d_standard_counted(
    input: &ClipTensor,
    kernel: &Array,
    bias: Option<&Array>,
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    check_standard(input, kernel, bias, spec)?;
    per_sample(input, |x| standard_forward(x, kernel.data(), bias.map(|b| b.data()), spec, counter))
}

/// Channel-wise (depthwise) convolution with spatial/temporal dilation:
/// `out[h,w,t,m] = Σ K[i,j,k,m] · x[h·s + γ_s·i − c_h, w·s + γ_s·j − c_w, t·s + γ_t·k − c_t, m]`.
pub fn conv3d_channelwise(input: &ClipTensor, kernel: &Array, spec: &ConvSpec) -> Result<ClipTensor> {
    conv3d_channelwise_counted(input, kernel, spec, None)
}

pub fn conv3d_channelwise_counted(
    input: &ClipTensor,
    kernel: &Array,
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    check_channelwise(input, kernel, spec)?;
    per_sample(input, |x| channelwise_forward(x, kernel.data(), spec, counter))
}

pub fn conv3d_pointwise(input: &ClipTensor, matrix: &Array, bias: Option<&Array>) -> Result<ClipTensor> {
    conv3d_pointwise_counted(input, matrix, bias, None)
}

pub fn conv3d_pointwise_counted(
    input: &ClipTensor,
    matrix: &Array,
    bias: Option<&Array>,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    check_pointwise(input, matrix, bias)?;
    let n = matrix.dims()[1];
    pointwise_forward(input, matrix.data(), bias.map(|b| b.data()), n, counter)
}

/// Channel-wise convolution followed by point-wise convolution.
pub fn conv3d_separable(
    input: &ClipTensor,
    channelwise: &Array,
    pointwise: &Array,
    bias: Option<&Array>,
    spec: &ConvSpec,
) -> Result<ClipTensor> {
    conv3d_separable_counted(input, channelwise, pointwise, bias, spec, None)
}

pub fn conv3d_separable_counted(
    input: &ClipTensor,
    channelwise: &Array,
    pointwise: &Array,
    bias: Option<&Array>,
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    pointwise.expect_dims(&[spec.channels_in, spec.channels_out], "separable point-wise weights")?;
    let mid = conv3d_channelwise_counted(input, channelwise, &channelwise_spec_of(spec), counter)?;
    conv3d_pointwise_counted(&mid, pointwise, bias, counter)
}

/// Spatial `(K_h, K_w, 1)` convolution to `M′` channels, then temporal `(1, 1, K_t)` to `N`.
pub fn conv_r2plus1d(
    input: &ClipTensor,
    spatial: &Array,
    temporal: &Array,
    bias: Option<&Array>,
    spec: &ConvSpec,
) -> Result<ClipTensor> {
    conv_r2plus1d_counted(input, spatial, temporal, bias, spec, None)
}

pub fn conv_r2plus1d_counted(
    input: &ClipTensor,
    spatial: &Array,
    temporal: &Array,
    bias: Option<&Array>,
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    let mp = r2plus1d_mid(spatial)?;
    let mid = conv3d_standard_counted(input, spatial, None, &spatial_stage(spec, mp), counter)?;
    conv3d_standard_counted(&mid, temporal, bias, &temporal_stage(spec, mp), counter)
}

/// Dispatches on the weight variant.
pub fn conv_forward(
    input: &ClipTensor,
    weights: &WeightSet,
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    match weights {
        WeightSet::Standard { kernel, bias } => conv3d_standard_counted(input, kernel, bias.as_ref(), spec, counter),
        WeightSet::Channelwise { kernel } => conv3d_channelwise_counted(input, kernel, spec, counter),
        WeightSet::Pointwise { matrix, bias } => conv3d_pointwise_counted(input, matrix, bias.as_ref(), counter),
        WeightSet::Separable { channelwise, pointwise, bias } => {
            conv3d_separable_counted(input, channelwise, pointwise, bias.as_ref(), spec, counter)
        }
        WeightSet::R2plus1d { spatial, temporal, bias } => {
            conv_r2plus1d_counted(input, spatial, temporal, bias.as_ref(), spec, counter)
        }
    }
}

/// Analytic gradients of [`conv_forward`] given the upstream gradient.
pub fn conv_backward(
    input: &ClipTensor,
    weights: &WeightSet,
    spec: &ConvSpec,
    grad_out: &ClipTensor,
) -> Result<GradBundle> {
    match weights {
        WeightSet::Standard { kernel, bias } => {
            check_standard(input, kernel, bias.as_ref(), spec)?;
            let (gi, gk, gb) = standard_backward(input, kernel, bias.is_some(), spec, grad_out)?;
            Ok(GradBundle { input: gi, weights: WeightSet::Standard { kernel: gk, bias: gb } })
        }
        WeightSet::Channelwise { kernel } => {
            check_channelwise(input, kernel, spec)?;
            let (gi, gk) = channelwise_backward(input, kernel, spec, grad_out)?;
            Ok(GradBundle { input: gi, weights: WeightSet::Channelwise { kernel: gk } })
        }
        WeightSet::Pointwise { matrix, bias } => {
            check_pointwise(input, matrix, bias.as_ref())?;
            let (gi, gm, gb) = pointwise_backward(input, matrix, bias.is_some(), grad_out)?;
            Ok(GradBundle { input: gi, weights: WeightSet::Pointwise { matrix: gm, bias: gb } })
        }
        WeightSet::Separable { channelwise, pointwise, bias } => {
            let cw_spec = channelwise_spec_of(spec);
            pointwise.expect_dims(&[spec.channels_in, spec.channels_out], "separable point-wise weights")?;
            let mid = conv3d_channelwise(input, channelwise, &cw_spec)?;
            let (g_mid, gp, gb) = pointwise_backward(&mid, pointwise, bias.is_some(), grad_out)?;
            let (gi, gc) = channelwise_backward(input, channelwise, &cw_spec, &g_mid)?;
            Ok(GradBundle { input: gi, weights: WeightSet::Separable { channelwise: gc, pointwise: gp, bias: gb } })
        }
        WeightSet::R2plus1d { spatial, temporal, bias } => {
            let mp = r2plus1d_mid(spatial)?;
            let (s_spec, t_spec) = (spatial_stage(spec, mp), temporal_stage(spec, mp));
            let mid = conv3d_standard(input, spatial, None, &s_spec)?;
            check_standard(&mid, temporal, bias.as_ref(), &t_spec)?;
            let (g_mid, gt, gb) = standard_backward(&mid, temporal, bias.is_some(), &t_spec, grad_out)?;
            let (gi, gs, _) = standard_backward(input, spatial, false, &s_spec, &g_mid)?;
            Ok(GradBundle { input: gi, weights: WeightSet::R2plus1d { spatial: gs, temporal: gt, bias: gb } })
        }
    }
}

// ---------------------------------------------------------------------------
// validation

fn r2plus1d_mid(spatial: &Array) -> Result<usize> {
    match spatial.dims() {
        [_, _, 1, _, mp] if *mp >= 1 => Ok(*mp),
        dims => Err(Error::Mismatch(format!("R(2+1)D spatial weights must be [K_h, K_w, 1, M, M'], got {dims:?}"))),
    }
}

fn check_input_channels(input: &ClipTensor, m: usize) -> Result<()> {
    if input.shape().c != m {
        return Err(Error::Mismatch(format!("input has {} channels, kernel expects {m}", input.shape().c)));
    }
    Ok(())
}

fn check_bias(bias: Option<&Array>, n: usize) -> Result<()> {
    if let Some(b) = bias {
        b.expect_dims(&[n], "bias")?;
    }
    Ok(())
}

fn check_standard(input: &ClipTensor, kernel: &Array, bias: Option<&Array>, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    let [kh, kw, kt] = spec.kernel;
    kernel.expect_dims(&[kh, kw, kt, spec.channels_in, spec.channels_out], "standard kernel")?;
    check_bias(bias, spec.channels_out)?;
    check_input_channels(input, spec.channels_in)
}

fn check_channelwise(input: &ClipTensor, kernel: &Array, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    let [kh, kw, kt] = spec.kernel;
    kernel.expect_dims(&[kh, kw, kt, spec.channels_in], "channel-wise kernel")?;
    check_input_channels(input, spec.channels_in)
}

fn check_pointwise(input: &ClipTensor, matrix: &Array, bias: Option<&Array>) -> Result<()> {
    let [m, n] = matrix.dims() else {
        return Err(Error::Mismatch(format!("point-wise weights must be rank 2, got {:?}", matrix.dims())));
    };
    check_bias(bias, *n)?;
    check_input_channels(input, *m)
}

// ---------------------------------------------------------------------------
// batch plumbing

fn per_sample(input: &ClipTensor, f: impl Fn(&ClipTensor) -> Result<ClipTensor>) -> Result<ClipTensor> {
    if input.shape().batch.is_none() {
        return f(input);
    }
    let outs = input.samples().map(|s| f(&s)).collect::<Result<Vec<_>>>()?;
    ClipTensor::stack(&outs)
}

/// Runs a per-sample backward over a batch, stacking input gradients and
/// summing weight gradients.
fn per_sample_backward(
    input: &ClipTensor,
    grad_out: &ClipTensor,
    f: impl Fn(&ClipTensor, &ClipTensor) -> Result<(ClipTensor, Vec<Vec<f64>>)>,
) -> Result<(ClipTensor, Vec<Vec<f64>>)> {
    if input.shape().batch.is_none() {
        return f(input, grad_out);
    }
    if input.shape().batch != grad_out.shape().batch {
        return Err(Error::Mismatch("batch size of gradient differs from input".into()));
    }
    let mut grads_in = Vec::new();
    let mut acc: Option<Vec<Vec<f64>>> = None;
    for (x, g) in input.samples().zip(grad_out.samples()) {
        let (gi, gw) = f(&x, &g)?;
        grads_in.push(gi);
        match &mut acc {
            None => acc = Some(gw),
            Some(a) => {
                for (dst, src) in a.iter_mut().zip(&gw) {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
    Ok((ClipTensor::stack(&grads_in)?, acc.unwrap_or_default()))
}

fn expect_grad_shape(grad_out: &ClipTensor, expected: TensorShape) -> Result<()> {
    if grad_out.shape() != expected {
        return Err(Error::Mismatch(format!(
            "upstream gradient {} does not match forward output {}",
            grad_out.shape(),
            expected
        )));
    }
    Ok(())
}

struct Taps {
    fwd: [Vec<Vec<(usize, usize)>>; 3],
    rev: [Vec<Vec<(usize, usize)>>; 3],
}

impl Taps {
    fn new(geo: &[AxisGeometry; 3]) -> Self {
        let fwd = std::array::from_fn(|a| (0..geo[a].output).map(|o| geo[a].taps_for(o)).collect());
        let rev = std::array::from_fn(|a| (0..geo[a].input).map(|i| geo[a].readers_of(i)).collect());
        Self { fwd, rev }
    }
}

fn charge(counter: Option<&CountingContext>, executed: u64, all_taps: u64) {
    if let Some(c) = counter {
        match c.mode() {
            CountMode::Executed => c.add(executed),
            CountMode::AllTaps => c.add(all_taps),
        }
    }
}

// ---------------------------------------------------------------------------
// standard

fn standard_forward(
    x: &ClipTensor,
    kernel: &[f64],
    bias: Option<&[f64]>,
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    let s = x.shape();
    let geo = spec.geometry([s.h, s.w, s.t])?;
    let [_, kw, kt] = spec.kernel;
    let (m, n) = (spec.channels_in, spec.channels_out);
    let out_shape = TensorShape::new(geo[0].output, geo[1].output, geo[2].output, n)?;
    let taps = Taps::new(&geo);
    let (wo, to) = (out_shape.w, out_shape.t);
    let xd = x.data();
    let mut out = vec![0.0; out_shape.numel()];
    let executed: u64 = out
        .par_chunks_mut(wo * to * n)
        .enumerate()
        .map(|(oh, orow)| {
            let mut count = 0u64;
            for ow in 0..wo {
                for ot in 0..to {
                    let acc = &mut orow[(ow * to + ot) * n..][..n];
                    if let Some(b) = bias {
                        acc.copy_from_slice(b);
                    }
                    for &(i, ih) in &taps.fwd[0][oh] {
                        for &(j, iw) in &taps.fwd[1][ow] {
                            for &(k, it) in &taps.fwd[2][ot] {
                                let xs = &xd[((ih * s.w + iw) * s.t + it) * m..][..m];
                                let wb = &kernel[((i * kw + j) * kt + k) * m * n..][..m * n];
                                for (&xv, wr) in xs.iter().zip(wb.chunks_exact(n)) {
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    for (a, &wv) in acc.iter_mut().zip(wr) {
                                        *a += xv * wv;
                                    }
                                }
                                count += (m * n) as u64;
                            }
                        }
                    }
                }
            }
            count
        })
        .sum();
    let all = (out_shape.sites() * spec.kernel_volume() * m * n) as u64;
    charge(counter, executed, all);
    ClipTensor::from_vec(out_shape, out)
}

fn standard_backward(
    input: &ClipTensor,
    kernel: &Array,
    with_bias: bool,
    spec: &ConvSpec,
    grad_out: &ClipTensor,
) -> Result<(ClipTensor, Array, Option<Array>)> {
    let (gi, mut gw) = per_sample_backward(input, grad_out, |x, g| {
        let (gi, gk, gb) = standard_backward_sample(x, kernel.data(), spec, g)?;
        Ok((gi, vec![gk, gb]))
    })?;
    let gb = gw.pop().expect("bias gradient");
    let gk = gw.pop().expect("kernel gradient");
    Ok((
        gi,
        Array::from_vec(kernel.dims(), gk)?,
        with_bias.then(|| Array::from_vec(&[spec.channels_out], gb)).transpose()?,
    ))
}

fn standard_backward_sample(
    x: &ClipTensor,
    kernel: &[f64],
    spec: &ConvSpec,
    g: &ClipTensor,
) -> Result<(ClipTensor, Vec<f64>, Vec<f64>)> {
    let s = x.shape();
    let geo = spec.geometry([s.h, s.w, s.t])?;
    let [kh, kw, kt] = spec.kernel;
    let (m, n) = (spec.channels_in, spec.channels_out);
    let out_shape = TensorShape::new(geo[0].output, geo[1].output, geo[2].output, n)?;
    expect_grad_shape(g, out_shape)?;
    let taps = Taps::new(&geo);
    let (wo, to) = (out_shape.w, out_shape.t);
    let (xd, gd) = (x.data(), g.data());

    let mut gi = vec![0.0; s.numel()];
    gi.par_chunks_mut(s.w * s.t * m).enumerate().for_each(|(ih, irow)| {
        for iw in 0..s.w {
            for it in 0..s.t {
                let acc = &mut irow[(iw * s.t + it) * m..][..m];
                for &(i, oh) in &taps.rev[0][ih] {
                    for &(j, ow) in &taps.rev[1][iw] {
                        for &(k, ot) in &taps.rev[2][it] {
                            let gs = &gd[((oh * wo + ow) * to + ot) * n..][..n];
                            let wb = &kernel[((i * kw + j) * kt + k) * m * n..][..m * n];
                            for (a, wr) in acc.iter_mut().zip(wb.chunks_exact(n)) {
                                *a += dot(wr, gs);
                            }
                        }
                    }
                }
            }
        }
    });

    let mut gk = vec![0.0; kh * kw * kt * m * n];
    gk.par_chunks_mut(m * n).enumerate().for_each(|(tap, gkb)| {
        let (i, j, k) = (tap / (kw * kt), (tap / kt) % kw, tap % kt);
        for oh in 0..geo[0].output {
            let Some(ih) = geo[0].source(oh, i) else { continue };
            for ow in 0..wo {
                let Some(iw) = geo[1].source(ow, j) else { continue };
                for ot in 0..to {
                    let Some(it) = geo[2].source(ot, k) else { continue };
                    let xs = &xd[((ih * s.w + iw) * s.t + it) * m..][..m];
                    let gs = &gd[((oh * wo + ow) * to + ot) * n..][..n];
                    for (&xv, row) in xs.iter().zip(gkb.chunks_exact_mut(n)) {
                        if xv == 0.0 {
                            continue;
                        }
                        for (d, &gv) in row.iter_mut().zip(gs) {
                            *d += xv * gv;
                        }
                    }
                }
            }
        }
    });

    let gb = channel_sums(gd, n);
    Ok((ClipTensor::from_vec(s, gi)?, gk, gb))
}

// ---------------------------------------------------------------------------
// channel-wise

fn channelwise_forward(
    x: &ClipTensor,
    kernel: &[f64],
    spec: &ConvSpec,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    let s = x.shape();
    let geo = spec.geometry([s.h, s.w, s.t])?;
    let [_, kw, kt] = spec.kernel;
    let m = spec.channels_in;
    let out_shape = TensorShape::new(geo[0].output, geo[1].output, geo[2].output, m)?;
    let taps = Taps::new(&geo);
    let (wo, to) = (out_shape.w, out_shape.t);
    let xd = x.data();
    let mut out = vec![0.0; out_shape.numel()];
    let executed: u64 = out
        .par_chunks_mut(wo * to * m)
        .enumerate()
        .map(|(oh, orow)| {
            let mut count = 0u64;
            for ow in 0..wo {
                for ot in 0..to {
                    let acc = &mut orow[(ow * to + ot) * m..][..m];
                    for &(i, ih) in &taps.fwd[0][oh] {
                        for &(j, iw) in &taps.fwd[1][ow] {
                            for &(k, it) in &taps.fwd[2][ot] {
                                let xs = &xd[((ih * s.w + iw) * s.t + it) * m..][..m];
                                let ks = &kernel[((i * kw + j) * kt + k) * m..][..m];
                                for ((a, &xv), &kv) in acc.iter_mut().zip(xs).zip(ks) {
                                    *a += kv * xv;
                                }
                                count += m as u64;
                            }
                        }
                    }
                }
            }
            count
        })
        .sum();
    let all = (out_shape.sites() * spec.kernel_volume() * m) as u64;
    charge(counter, executed, all);
    ClipTensor::from_vec(out_shape, out)
}

fn channelwise_backward(
    input: &ClipTensor,
    kernel: &Array,
    spec: &ConvSpec,
    grad_out: &ClipTensor,
) -> Result<(ClipTensor, Array)> {
    let (gi, mut gw) = per_sample_backward(input, grad_out, |x, g| {
        let (gi, gk) = channelwise_backward_sample(x, kernel.data(), spec, g)?;
        Ok((gi, vec![gk]))
    })?;
    Ok((gi, Array::from_vec(kernel.dims(), gw.pop().expect("kernel gradient"))?))
}

fn channelwise_backward_sample(
    x: &ClipTensor,
    kernel: &[f64],
    spec: &ConvSpec,
    g: &ClipTensor,
) -> Result<(ClipTensor, Vec<f64>)> {
    let s = x.shape();
    let geo = spec.geometry([s.h, s.w, s.t])?;
    let [kh, kw, kt] = spec.kernel;
    let m = spec.channels_in;
    let out_shape = TensorShape::new(geo[0].output, geo[1].output, geo[2].output, m)?;
    expect_grad_shape(g, out_shape)?;
    let taps = Taps::new(&geo);
    let (wo, to) = (out_shape.w, out_shape.t);
    let (xd, gd) = (x.data(), g.data());

    let mut gi = vec![0.0; s.numel()];
    gi.par_chunks_mut(s.w * s.t * m).enumerate().for_each(|(ih, irow)| {
        for iw in 0..s.w {
            for it in 0..s.t {
                let acc = &mut irow[(iw * s.t + it) * m..][..m];
                for &(i, oh) in &taps.rev[0][ih] {
                    for &(j, ow) in &taps.rev[1][iw] {
                        for &(k, ot) in &taps.rev[2][it] {
                            let gs = &gd[((oh * wo + ow) * to + ot) * m..][..m];
                            let ks = &kernel[((i * kw + j) * kt + k) * m..][..m];
                            for ((a, &gv), &kv) in acc.iter_mut().zip(gs).zip(ks) {
                                *a += kv * gv;
                            }
                        }
                    }
                }
            }
        }
    });

    let mut gk = vec![0.0; kh * kw * kt * m];
    gk.par_chunks_mut(m).enumerate().for_each(|(tap, gkb)| {
        let (i, j, k) = (tap / (kw * kt), (tap / kt) % kw, tap % kt);
        for oh in 0..geo[0].output {
            let Some(ih) = geo[0].source(oh, i) else { continue };
            for ow in 0..wo {
                let Some(iw) = geo[1].source(ow, j) else { continue };
                for ot in 0..to {
                    let Some(it) = geo[2].source(ot, k) else { continue };
                    let xs = &xd[((ih * s.w + iw) * s.t + it) * m..][..m];
                    let gs = &gd[((oh * wo + ow) * to + ot) * m..][..m];
                    for ((d, &xv), &gv) in gkb.iter_mut().zip(xs).zip(gs) {
                        *d += xv * gv;
                    }
                }
            }
        }
    });
    Ok((ClipTensor::from_vec(s, gi)?, gk))
}

// ---------------------------------------------------------------------------
// point-wise

fn pointwise_forward(
    x: &ClipTensor,
    matrix: &[f64],
    bias: Option<&[f64]>,
    n: usize,
    counter: Option<&CountingContext>,
) -> Result<ClipTensor> {
    let s = x.shape();
    let m = s.c;
    let out_shape = s.with_channels(n);
    let sites = s.batch_len() * s.sites();
    let mut out = vec![0.0; sites * n];
    const BLOCK: usize = 64;
    out.par_chunks_mut(BLOCK * n).enumerate().for_each(|(blk, ochunk)| {
        for (local, acc) in ochunk.chunks_exact_mut(n).enumerate() {
            let site = blk * BLOCK + local;
            if let Some(b) = bias {
                acc.copy_from_slice(b);
            }
            let xs = &x.data()[site * m..][..m];
            for (&xv, wr) in xs.iter().zip(matrix.chunks_exact(n)) {
                if xv == 0.0 {
                    continue;
                }
                for (a, &wv) in acc.iter_mut().zip(wr) {
                    *a += xv * wv;
                }
            }
        }
    });
    let macs = (sites * m * n) as u64;
    charge(counter, macs, macs);
    ClipTensor::from_vec(out_shape, out)
}

fn pointwise_backward(
    x: &ClipTensor,
    matrix: &Array,
    with_bias: bool,
    g: &ClipTensor,
) -> Result<(ClipTensor, Array, Option<Array>)> {
    let (m, n) = (matrix.dims()[0], matrix.dims()[1]);
    expect_grad_shape(g, x.shape().with_channels(n))?;
    let (xd, gd, pd) = (x.data(), g.data(), matrix.data());
    let sites = x.shape().batch_len() * x.shape().sites();

    let mut gi = vec![0.0; sites * m];
    const BLOCK: usize = 64;
    gi.par_chunks_mut(BLOCK * m).enumerate().for_each(|(blk, ichunk)| {
        for (local, acc) in ichunk.chunks_exact_mut(m).enumerate() {
            let site = blk * BLOCK + local;
            let gs = &gd[site * n..][..n];
            for (a, wr) in acc.iter_mut().zip(pd.chunks_exact(n)) {
                *a += dot(wr, gs);
            }
        }
    });

    let mut gm = vec![0.0; m * n];
    gm.par_chunks_mut(n).enumerate().for_each(|(mi, row)| {
        for site in 0..sites {
            let xv = xd[site * m + mi];
            if xv == 0.0 {
                continue;
            }
            for (d, &gv) in row.iter_mut().zip(&gd[site * n..][..n]) {
                *d += xv * gv;
            }
        }
    });

    let gb = with_bias.then(|| Array::from_vec(&[n], channel_sums(gd, n))).transpose()?;
    Ok((ClipTensor::from_vec(x.shape(), gi)?, Array::from_vec(&[m, n], gm)?, gb))
}

fn channel_sums(data: &[f64], c: usize) -> Vec<f64> {
    let mut sums = vec![0.0; c];
    for site in data.chunks_exact(c) {
        for (s, &v) in sums.iter_mut().zip(site) {
            *s += v;
        }
    }
    sums
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
