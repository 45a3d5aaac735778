use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding; output extent is `ceil(input / stride)` and taps are
    /// centred at `⌊(K − 1)·γ / 2⌋`.
    #[default]
    Same,
    /// No padding; only taps fully inside the input.
    Valid,
}

/// Geometry of one 3D convolution.
///
/// `kernel` and `stride` are ordered `(h, w, t)`. The spatial dilation applies
/// to both `h` and `w`, the temporal dilation to `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: [usize; 3],
    pub channels_in: usize,
    pub channels_out: usize,
    pub spatial_dilation: usize,
    pub temporal_dilation: usize,
    pub stride: [usize; 3],
    pub padding: Padding,
}

impl ConvSpec {
    /// Unit stride, no dilation, same padding.
    pub fn new(kernel: [usize; 3], channels_in: usize, channels_out: usize) -> Self {
        Self {
            kernel,
            channels_in,
            channels_out,
            spatial_dilation: 1,
            temporal_dilation: 1,
            stride: [1, 1, 1],
            padding: Padding::Same,
        }
    }

    pub fn cube(k: usize, channels_in: usize, channels_out: usize) -> Self {
        Self::new([k, k, k], channels_in, channels_out)
    }

    pub fn pointwise(channels_in: usize, channels_out: usize) -> Self {
        Self::new([1, 1, 1], channels_in, channels_out)
    }

    pub fn with_dilation(mut self, spatial: usize, temporal: usize) -> Self {
        self.spatial_dilation = spatial;
        self.temporal_dilation = temporal;
        self
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(&self) -> [usize; 3] {
        [self.spatial_dilation, self.spatial_dilation, self.temporal_dilation]
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.kernel.iter().chain(&self.stride).all(|&v| v >= 1)
            && self.channels_in >= 1
            && self.channels_out >= 1
            && self.spatial_dilation >= 1
            && self.temporal_dilation >= 1;
        if !positive {
            return Err(Error::Config(format!("non-positive field in {self:?}")));
        }
        Ok(())
    }

    /// Output `(h, w, t)` extents for the given input extents.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let g = self.geometry(input)?;
        Ok([g[0].output, g[1].output, g[2].output])
    }

    pub(crate) fn geometry(&self, input: [usize; 3]) -> Result<[AxisGeometry; 3]> {
        self.validate()?;
        let dil = self.dilation();
        let mut axes = [AxisGeometry::default(); 3];
        for a in 0..3 {
            axes[a] = AxisGeometry::new(input[a], self.kernel[a], self.stride[a], dil[a], self.padding)?;
        }
        Ok(axes)
    }
}

/// Index arithmetic for one axis: tap `k` of output `o` reads input
/// `o·stride + k·dilation − offset`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct AxisGeometry {
    pub input: usize,
    pub output: usize,
    pub taps: usize,
    pub stride: usize,
    pub dilation: usize,
    pub offset: usize,
}

impl AxisGeometry {
    pub fn new(input: usize, taps: usize, stride: usize, dilation: usize, padding: Padding) -> Result<Self> {
        let extent = (taps - 1) * dilation + 1;
        let (output, offset) = match padding {
            Padding::Same => (input.div_ceil(stride), (taps - 1) * dilation / 2),
            Padding::Valid => {
                if extent > input {
                    return Err(Error::Shape(format!("dilated kernel extent {extent} exceeds input extent {input}")));
                }
                ((input - extent) / stride + 1, 0)
            }
        };
        Ok(Self { input, output, taps, stride, dilation, offset })
    }

    /// Input coordinate read by tap `k` of output `o`, if inside the input.
    #[inline]
    pub fn source(&self, o: usize, k: usize) -> Option<usize> {
        let pos = (o * self.stride + k * self.dilation) as isize - self.offset as isize;
        (pos >= 0 && (pos as usize) < self.input).then_some(pos as usize)
    }

    /// Output coordinate that reads input `i` through tap `k`, if any.
    #[inline]
    pub fn target(&self, i: usize, k: usize) -> Option<usize> {
        let num = i as isize + self.offset as isize - (k * self.dilation) as isize;
        if num < 0 || !(num as usize).is_multiple_of(self.stride) {
            return None;
        }
        let o = num as usize / self.stride;
        (o < self.output).then_some(o)
    }

    /// `(tap, source)` pairs for output `o`.
    pub fn taps_for(&self, o: usize) -> Vec<(usize, usize)> {
        (0..self.taps).filter_map(|k| self.source(o, k).map(|s| (k, s))).collect()
    }

    /// `(tap, output)` pairs that read input `i`.
    pub fn readers_of(&self, i: usize) -> Vec<(usize, usize)> {
        (0..self.taps).filter_map(|k| self.target(i, k).map(|o| (k, o))).collect()
    }
}
