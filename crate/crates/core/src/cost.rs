//! Closed-form multiply-accumulate, parameter and activation accounting.
//!
//! Costs use the output extents of each convolution and charge every tap,
//! including taps that land in zero padding.

use num_rational::Ratio;

use crate::error::Result;
use crate::kernels::{spatial_stage, temporal_stage, ConvKind, ConvSpec};
use crate::network::{NetworkConfig, Part, PlannedLayer};

/// Bytes per stored activation value.
pub const ELEMENT_BYTES: u64 = std::mem::size_of::<f64>() as u64;

fn output_sites(input: [usize; 3], spec: &ConvSpec) -> Result<u64> {
    Ok(spec.output_dims(input)?.iter().map(|&d| d as u64).product())
}

/// `H·W·T·M·N·K_h·K_w·K_t` with output extents substituted.
pub fn cost_standard(input: [usize; 3], spec: &ConvSpec) -> Result<u64> {
    let per_site = spec.kernel_volume() as u64 * spec.channels_in as u64 * spec.channels_out as u64;
    Ok(output_sites(input, spec)? * per_site)
}

/// `H·W·T·M·K_h·K_w·K_t`; independent of `N`.
pub fn cost_channelwise(input: [usize; 3], spec: &ConvSpec) -> Result<u64> {
    Ok(output_sites(input, spec)? * spec.kernel_volume() as u64 * spec.channels_in as u64)
}

/// `H·W·T·M·N`; independent of the kernel extents.
pub fn cost_pointwise(input: [usize; 3], spec: &ConvSpec) -> Result<u64> {
    let sites: u64 = input.iter().map(|&d| d as u64).product();
    Ok(sites * spec.channels_in as u64 * spec.channels_out as u64)
}

/// Channel-wise stage followed by a point-wise stage on its output.
pub fn cost_separable(input: [usize; 3], spec: &ConvSpec) -> Result<u64> {
    let mid = spec.output_dims(input)?;
    Ok(cost_channelwise(input, spec)? + cost_pointwise(mid, spec)?)
}

/// Spatial stage to `m_prime` channels followed by the temporal stage.
pub fn cost_r2plus1d(input: [usize; 3], spec: &ConvSpec, m_prime: usize) -> Result<u64> {
    let s = spatial_stage(spec, m_prime);
    let t = temporal_stage(spec, m_prime);
    let mid = s.output_dims(input)?;
    Ok(cost_standard(input, &s)? + cost_standard(mid, &t)?)
}

/// `1/N + 1/(K_h·K_w·K_t)`: separable over standard cost.
pub fn separable_reduction_ratio(spec: &ConvSpec) -> Ratio<u64> {
    Ratio::new(1, spec.channels_out as u64) + Ratio::new(1, spec.kernel_volume() as u64)
}

/// `M′/(N·K_t) + M′/(M·K_h·K_w)`: R(2+1)D over standard cost.
pub fn r2plus1d_reduction_ratio(spec: &ConvSpec, m_prime: usize) -> Ratio<u64> {
    let [kh, kw, kt] = spec.kernel.map(|k| k as u64);
    let (m, n, mp) = (spec.channels_in as u64, spec.channels_out as u64, m_prime as u64);
    Ratio::new(mp, n * kt) + Ratio::new(mp, m * kh * kw)
}

/// Weights plus optional bias of one layer.
pub fn layer_parameters(kind: ConvKind, spec: &ConvSpec, m_prime: usize, bias: bool) -> u64 {
    let [kh, kw, kt] = spec.kernel.map(|k| k as u64);
    let (m, n, mp) = (spec.channels_in as u64, spec.channels_out as u64, m_prime as u64);
    let weights = match kind {
        ConvKind::Standard => kh * kw * kt * m * n,
        ConvKind::Channelwise => kh * kw * kt * m,
        ConvKind::Pointwise => m * n,
        ConvKind::Separable => kh * kw * kt * m + m * n,
        ConvKind::R2plus1d => kh * kw * m * mp + kt * mp * n,
    };
    weights + if bias { n } else { 0 }
}

/// Cost of one layer at one input size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: ConvKind,
    pub macs: u64,
    pub parameters: u64,
    /// Output values, plus the intermediate of factorized layers, times [`ELEMENT_BYTES`].
    pub activation_bytes: u64,
}

impl LayerCost {
    pub fn ops(&self) -> u64 {
        2 * self.macs
    }
}

pub fn layer_cost(planned: &PlannedLayer) -> Result<LayerCost> {
    let l = &planned.layer;
    let input = planned.input;
    let spec = &l.spec;
    let out_values = |dims: [usize; 3], c: usize| dims.iter().map(|&d| d as u64).product::<u64>() * c as u64;
    let output = out_values(planned.output, spec.channels_out);
    let (macs, intermediate) = match l.kind {
        ConvKind::Standard => (cost_standard(input, spec)?, 0),
        ConvKind::Channelwise => (cost_channelwise(input, spec)?, 0),
        ConvKind::Pointwise => (cost_pointwise(input, spec)?, 0),
        ConvKind::Separable => (cost_separable(input, spec)?, out_values(planned.output, spec.channels_in)),
        ConvKind::R2plus1d => {
            let mid = spatial_stage(spec, l.m_prime).output_dims(input)?;
            (cost_r2plus1d(input, spec, l.m_prime)?, out_values(mid, l.m_prime))
        }
    };
    Ok(LayerCost {
        name: l.name.clone(),
        kind: l.kind,
        macs,
        parameters: layer_parameters(l.kind, spec, l.m_prime, l.bias),
        activation_bytes: (output + intermediate) * ELEMENT_BYTES,
    })
}

/// Totals over an ordered list of layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub macs: u64,
    /// Additions plus multiplications: two per MAC.
    pub ops: u64,
    pub parameters: u64,
    pub activation_bytes: u64,
    pub per_layer: Vec<LayerCost>,
}

impl CostReport {
    pub fn from_layers(per_layer: Vec<LayerCost>) -> Self {
        let macs = per_layer.iter().map(|l| l.macs).sum();
        Self {
            macs,
            ops: 2 * macs,
            parameters: per_layer.iter().map(|l| l.parameters).sum(),
            activation_bytes: per_layer.iter().map(|l| l.activation_bytes).sum(),
            per_layer,
        }
    }
}

/// Cost of the pyramid pooling module, decoder and head for one clip size.
/// The encoder is left out.
pub fn network_cost(config: &NetworkConfig, input: [usize; 3]) -> Result<CostReport> {
    let plan = config.plan(input)?;
    let layers =
        plan.layers.iter().filter(|p| p.layer.part != Part::Encoder).map(layer_cost).collect::<Result<Vec<_>>>()?;
    Ok(CostReport::from_layers(layers))
}
