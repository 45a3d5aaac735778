use crate::error::{Error, Result};
use crate::kernels::{m_prime, ConvKind, ConvSpec, WeightSet};

use super::config::{ConvVariant, NetworkConfig};

/// Which part of the network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Encoder,
    Pyramid,
    Decoder,
    Head,
}

/// A named convolution layer before weights are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub part: Part,
    pub kind: ConvKind,
    pub spec: ConvSpec,
    /// Intermediate width for R(2+1)D layers, 0 otherwise.
    pub m_prime: usize,
    pub bias: bool,
}

impl LayerSpec {
    fn new(name: String, part: Part, kind: ConvKind, spec: ConvSpec) -> Self {
        let m_prime = if kind == ConvKind::R2plus1d { m_prime(&spec) } else { 0 };
        let bias = kind != ConvKind::Channelwise;
        Self { name, part, kind, spec, m_prime, bias }
    }

    fn variant(name: String, part: Part, variant: ConvVariant, spec: ConvSpec) -> Self {
        Self::new(name, part, variant.kind(), spec)
    }

    fn pointwise(name: String, part: Part, m: usize, n: usize) -> Self {
        Self::new(name, part, ConvKind::Pointwise, ConvSpec::pointwise(m, n))
    }

    pub fn zero_weights(&self) -> WeightSet {
        WeightSet::zeros(self.kind, &self.spec, self.m_prime, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StageLayout {
    pub project: Option<usize>,
    pub conv: usize,
}

/// Positions of each layer in the flat layer list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub encoder: Vec<[usize; 2]>,
    /// Dilated branches in ascending rate order, then the unit branch.
    pub branches: Vec<usize>,
    pub frame: Option<usize>,
    pub fuse: usize,
    pub stages: Vec<StageLayout>,
    pub head: usize,
}

pub(crate) fn build_layers(cfg: &NetworkConfig) -> Result<(Vec<LayerSpec>, Layout)> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut push = |layer: LayerSpec| {
        layers.push(layer);
        layers.len() - 1
    };

    let mut encoder = Vec::new();
    let mut width = cfg.input_channels;
    for (i, b) in cfg.encoder.iter().enumerate() {
        let (ts, td) = b.temporal_schedule(cfg.temporal_dilation);
        let spatial = ConvSpec::new([b.spatial_kernel, b.spatial_kernel, 1], width, b.channels).with_stride([
            b.spatial_stride,
            b.spatial_stride,
            1,
        ]);
        let temporal = ConvSpec::new([1, 1, b.temporal_kernel], b.channels, b.channels)
            .with_stride([1, 1, ts])
            .with_dilation(1, td);
        let s = push(LayerSpec::new(format!("encoder{}.spatial", i + 1), Part::Encoder, ConvKind::Standard, spatial));
        let t = push(LayerSpec::new(format!("encoder{}.temporal", i + 1), Part::Encoder, ConvKind::Standard, temporal));
        encoder.push([s, t]);
        width = b.channels;
    }

    let p = &cfg.pyramid;
    let (feat, branch) = (width, p.branch_width(width));
    let mut branches = Vec::new();
    for rate in p.sorted_rates() {
        let spec = ConvSpec::cube(p.kernel, feat, branch).with_dilation(rate, 1);
        branches.push(push(LayerSpec::variant(format!("pyramid.rate{rate}"), Part::Pyramid, cfg.conv_variant, spec)));
    }
    if p.include_unit_branch {
        let spec = ConvSpec::pointwise(feat, branch);
        branches.push(push(LayerSpec::variant("pyramid.unit".into(), Part::Pyramid, cfg.conv_variant, spec)));
    }
    let frame = p
        .include_frame_features
        .then(|| push(LayerSpec::pointwise("pyramid.frame".into(), Part::Pyramid, feat, branch)));
    let fuse =
        push(LayerSpec::pointwise("pyramid.fuse".into(), Part::Pyramid, branch * p.branch_count(), p.fuse_width(feat)));
    width = p.fuse_width(feat);

    let mut stages = Vec::new();
    for (i, s) in cfg.decoder.stages.iter().enumerate() {
        let project = s.skip.map(|k| {
            let source = if k == 0 { cfg.input_channels } else { cfg.encoder[k - 1].channels };
            push(LayerSpec::pointwise(format!("decoder{}.project", i + 1), Part::Decoder, source, s.skip_channels))
        });
        let cin = width + if s.skip.is_some() { s.skip_channels } else { 0 };
        let spec = ConvSpec::cube(s.kernel, cin, s.channels);
        let conv = push(LayerSpec::variant(format!("decoder{}.conv", i + 1), Part::Decoder, cfg.conv_variant, spec));
        stages.push(StageLayout { project, conv });
        width = s.channels;
    }
    let head = push(LayerSpec::pointwise("head".into(), Part::Head, width, cfg.classes));
    Ok((layers, Layout { encoder, branches, frame, fuse, stages, head }))
}

/// A layer together with the `(h, w, t)` extents it sees for one input size.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedLayer {
    pub layer: LayerSpec,
    pub input: [usize; 3],
    pub output: [usize; 3],
}

/// Shape propagation for one input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub layers: Vec<PlannedLayer>,
    /// Encoder outputs, block by block.
    pub encoder_dims: Vec<[usize; 3]>,
    pub output: [usize; 3],
    /// Non-fatal findings, such as pyramid taps that only see padding.
    pub warnings: Vec<String>,
}

fn scaled(d: [usize; 3], s: [usize; 3]) -> [usize; 3] {
    [d[0] * s[0], d[1] * s[1], d[2] * s[2]]
}

impl NetworkConfig {
    /// Output extents of each encoder block.
    pub fn encoder_dims(&self, input: [usize; 3]) -> Result<Vec<[usize; 3]>> {
        let (layers, layout) = build_layers(self)?;
        let mut dims = input;
        let mut out = Vec::new();
        for &[s, t] in &layout.encoder {
            dims = layers[s].spec.output_dims(dims)?;
            dims = layers[t].spec.output_dims(dims)?;
            out.push(dims);
        }
        Ok(out)
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        Ok(build_layers(self)?.0)
    }

    /// Propagates `(h, w, t)` extents through every layer and checks that
    /// skips line up and that the logits match the input size.
    pub fn plan(&self, input: [usize; 3]) -> Result<Plan> {
        let (layers, layout) = build_layers(self)?;
        let stride = self.total_spatial_stride();
        if input.contains(&0) || !input[0].is_multiple_of(stride) || !input[1].is_multiple_of(stride) {
            return Err(Error::Shape(format!(
                "input {}x{} is not a positive multiple of the total stride {stride}",
                input[0], input[1]
            )));
        }
        let mut slots: Vec<Option<([usize; 3], [usize; 3])>> = vec![None; layers.len()];
        let mut warnings = Vec::new();
        let mut set = |i: usize, inp: [usize; 3]| -> Result<[usize; 3]> {
            let out = layers[i].spec.output_dims(inp)?;
            slots[i] = Some((inp, out));
            Ok(out)
        };

        let mut dims = input;
        let mut encoder_dims = Vec::new();
        for &[s, t] in &layout.encoder {
            dims = set(s, dims)?;
            dims = set(t, dims)?;
            encoder_dims.push(dims);
        }
        let feat = dims;
        for &b in &layout.branches {
            set(b, feat)?;
        }
        if let Some(f) = layout.frame {
            set(f, [1, 1, feat[2]])?;
        }
        for rate in self.pyramid.sorted_rates() {
            let extent = (self.pyramid.kernel - 1) * rate + 1;
            if extent > feat[0] || extent > feat[1] {
                warnings.push(format!(
                    "pyramid rate {rate} spans {extent} pixels but the feature map is {}x{}; most taps read padding",
                    feat[0], feat[1]
                ));
            }
        }
        dims = set(layout.fuse, feat)?;

        for (i, (stage, sl)) in self.decoder.stages.iter().zip(&layout.stages).enumerate() {
            dims = scaled(dims, stage.scale);
            if let (Some(k), Some(p)) = (stage.skip, sl.project) {
                let source = if k == 0 { input } else { encoder_dims[k - 1] };
                if source != dims {
                    return Err(Error::Shape(format!(
                        "decoder stage {} upsamples to {dims:?} but its skip has {source:?}",
                        i + 1
                    )));
                }
                set(p, source)?;
            }
            dims = set(sl.conv, dims)?;
        }
        dims = set(layout.head, dims)?;
        let output = scaled(dims, self.decoder.output_scale);
        if output != input {
            return Err(Error::Shape(format!("network maps {input:?} to logits of {output:?}")));
        }
        let layers = layers
            .into_iter()
            .zip(slots)
            .map(|(layer, slot)| {
                let (input, output) = slot.expect("every layer planned");
                PlannedLayer { layer, input, output }
            })
            .collect();
        Ok(Plan { layers, encoder_dims, output, warnings })
    }
}
