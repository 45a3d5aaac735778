use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::format::{read_archive, write_archive, Archive};
use crate::kernels::{
    argmax_classes, avg_pool_spatial_full, avg_pool_spatial_full_backward, broadcast_spatial,
    broadcast_spatial_backward, conv_backward, conv_forward, relu, relu_backward, softmax_ce_loss, trilinear_upsample,
    trilinear_upsample_backward, CountMode, CountingContext, GradBundle, WeightSet,
};
use crate::postproc::Mask;
use crate::tensor::{Array, ClipTensor, TensorShape};

use super::action::{ActionHead, ActionOutput};
use super::config::NetworkConfig;
use super::layout::{build_layers, LayerSpec, Layout, Part};

/// Encoder, pyramid pooling, decoder and segmentation head with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    layout: Layout,
    weights: Vec<WeightSet>,
    action: Option<ActionHead>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    input: ClipTensor,
    /// `(after spatial conv, after temporal conv)` per block, both rectified.
    encoder: Vec<(ClipTensor, ClipTensor)>,
    branches: Vec<ClipTensor>,
    /// Pooled input and rectified projection of the frame-features branch.
    frame: Option<(ClipTensor, ClipTensor)>,
    concat: ClipTensor,
    pyramid: ClipTensor,
    stages: Vec<StageTrace>,
    head: ClipTensor,
    logits: ClipTensor,
}

#[derive(Debug, Clone)]
struct StageTrace {
    input_shape: TensorShape,
    concat: ClipTensor,
    output: ClipTensor,
}

impl Trace {
    pub fn logits(&self) -> &ClipTensor {
        &self.logits
    }

    /// Output of the last decoder stage, at the resolution of the head.
    pub fn features(&self) -> &ClipTensor {
        &self.stages.last().expect("decoder has stages").output
    }

    /// Output of the pyramid pooling module.
    pub fn pyramid_output(&self) -> &ClipTensor {
        &self.pyramid
    }

    /// Pre-fuse concatenation of all pyramid branches.
    pub fn pyramid_concat(&self) -> &ClipTensor {
        &self.concat
    }

    /// Final encoder features.
    pub fn encoder_output(&self) -> &ClipTensor {
        &self.encoder.last().expect("encoder has blocks").1
    }
}

/// Gradients of a scalar loss with respect to every weight array and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<WeightSet>,
    pub input: ClipTensor,
}

/// Per-frame masks of sites whose argmax class is not background.
pub fn foreground_masks(logits: &ClipTensor) -> Vec<Mask> {
    let s = logits.shape();
    let classes = argmax_classes(logits);
    (0..s.t)
        .map(|t| Mask { height: s.h, width: s.w, pixels: (0..s.h * s.w).map(|i| classes[i * s.t + t] != 0).collect() })
        .collect()
}

fn accumulate(slot: &mut Option<ClipTensor>, g: ClipTensor) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(acc) => acc.add(&g)?,
        None => g,
    });
    Ok(())
}

impl Network {
    /// All weights zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        let (layers, layout) = build_layers(&config)?;
        let weights = layers.iter().map(LayerSpec::zero_weights).collect();
        let channels = layers[layout.head].spec.channels_in;
        let action = config.action.as_ref().map(|a| ActionHead::zeros(a, channels));
        Ok(Self { config, layers, layout, weights, action })
    }

    /// He-normal kernels (fan-in), zero biases and a zero head.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (layer, w) in net.layers.iter().zip(&mut net.weights) {
            if layer.part == Part::Head {
                continue;
            }
            let names = w.array_names();
            for (name, a) in names.into_iter().zip(w.arrays_mut()) {
                if name == "bias" {
                    continue;
                }
                let dims = a.dims();
                let fan_in: usize = dims[..dims.len() - 1].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                for v in a.data_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        if let (Some(cfg), Some(head)) = (&net.config.action, &mut net.action) {
            *head = ActionHead::init(cfg, head.arrays()[0].1.dims()[0] / (cfg.crop * cfg.crop), &mut rng);
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[WeightSet] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [WeightSet] {
        &mut self.weights
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(WeightSet::parameter_count).sum()
    }

    pub fn action_head(&self) -> Option<&ActionHead> {
        self.action.as_ref()
    }

    pub fn action_head_mut(&mut self) -> Option<&mut ActionHead> {
        self.action.as_mut()
    }

    /// Every weight array as `layer.array`, in layer order, action head last.
    pub fn named_arrays(&self) -> Vec<(String, &Array)> {
        let mut out: Vec<(String, &Array)> = self
            .layers
            .iter()
            .zip(&self.weights)
            .flat_map(|(l, w)| {
                w.array_names().into_iter().zip(w.arrays()).map(move |(n, a)| (format!("{}.{n}", l.name), a))
            })
            .collect();
        if let Some(head) = &self.action {
            out.extend(head.arrays().into_iter().map(|(n, a)| (format!("action.{n}"), a)));
        }
        out
    }

    pub fn forward(&self, clip: &ClipTensor) -> Result<ClipTensor> {
        Ok(self.forward_traced(clip)?.logits)
    }

    pub fn forward_traced(&self, clip: &ClipTensor) -> Result<Trace> {
        self.run(clip, None)
    }

    /// Per-class argmax of the logits, one label per `(h, w, t)` site.
    pub fn predict(&self, clip: &ClipTensor) -> Result<Vec<usize>> {
        Ok(argmax_classes(&self.forward(clip)?))
    }

    /// Segments the clip, then classifies it from the largest predicted
    /// foreground region of each frame.
    pub fn classify(&self, clip: &ClipTensor) -> Result<ActionOutput> {
        let head = self.action.as_ref().ok_or_else(|| Error::Config("network has no action head".into()))?;
        let trace = self.forward_traced(clip)?;
        head.forward(trace.features(), &foreground_masks(&trace.logits))
    }

    /// MACs charged by each layer during one forward pass.
    pub fn profile(&self, clip: &ClipTensor, mode: CountMode) -> Result<Vec<(String, Part, u64)>> {
        let counters: Vec<_> = self.layers.iter().map(|_| CountingContext::new(mode)).collect();
        self.run(clip, Some(&counters))?;
        Ok(self.layers.iter().zip(&counters).map(|(l, c)| (l.name.clone(), l.part, c.macs())).collect())
    }

    fn conv(&self, i: usize, x: &ClipTensor, counters: Option<&[CountingContext]>) -> Result<ClipTensor> {
        conv_forward(x, &self.weights[i], &self.layers[i].spec, counters.map(|c| &c[i]))
    }

    fn conv_back(&self, i: usize, x: &ClipTensor, g: &ClipTensor) -> Result<GradBundle> {
        conv_backward(x, &self.weights[i], &self.layers[i].spec, g)
    }

    fn run(&self, clip: &ClipTensor, counters: Option<&[CountingContext]>) -> Result<Trace> {
        let s = clip.shape();
        if s.batch.is_some() {
            return Err(Error::Shape(format!("network expects a single clip, got {s}")));
        }
        if s.c != self.config.input_channels {
            return Err(Error::Mismatch(format!(
                "clip has {} channels, network expects {}",
                s.c, self.config.input_channels
            )));
        }
        self.config.plan([s.h, s.w, s.t])?;
        let layout = &self.layout;

        let mut encoder = Vec::with_capacity(layout.encoder.len());
        let mut x = clip.clone();
        for &[si, ti] in &layout.encoder {
            let mid = relu(&self.conv(si, &x, counters)?);
            let out = relu(&self.conv(ti, &mid, counters)?);
            x = out.clone();
            encoder.push((mid, out));
        }

        let feat = &x;
        let mut branches = Vec::with_capacity(layout.branches.len());
        for &b in &layout.branches {
            branches.push(relu(&self.conv(b, feat, counters)?));
        }
        let frame = match layout.frame {
            Some(f) => {
                let pooled = avg_pool_spatial_full(feat);
                let out = relu(&self.conv(f, &pooled, counters)?);
                Some((pooled, out))
            }
            None => None,
        };
        let concat = {
            let broadcast = match &frame {
                Some((_, out)) => Some(broadcast_spatial(out, feat.shape().h, feat.shape().w)?),
                None => None,
            };
            let parts: Vec<&ClipTensor> = branches.iter().chain(broadcast.as_ref()).collect();
            ClipTensor::concat_channels(&parts)?
        };
        let pyramid = self.conv(layout.fuse, &concat, counters)?;

        let mut h = pyramid.clone();
        let mut stages = Vec::with_capacity(layout.stages.len());
        for (cfg, sl) in self.config.decoder.stages.iter().zip(&layout.stages) {
            let input_shape = h.shape();
            let up = trilinear_upsample(&h, cfg.scale)?;
            let concat = match (cfg.skip, sl.project) {
                (Some(k), Some(p)) => {
                    let source = if k == 0 { clip } else { &encoder[k - 1].1 };
                    let projected = self.conv(p, source, counters)?;
                    ClipTensor::concat_channels(&[&up, &projected])?
                }
                _ => up,
            };
            let output = relu(&self.conv(sl.conv, &concat, counters)?);
            h = output.clone();
            stages.push(StageTrace { input_shape, concat, output });
        }
        let head = self.conv(layout.head, &h, counters)?;
        let logits = trilinear_upsample(&head, self.config.decoder.output_scale)?;
        Ok(Trace { input: clip.clone(), encoder, branches, frame, concat, pyramid, stages, head, logits })
    }

    /// Back-propagates `grad_logits` through the pass recorded in `trace`.
    pub fn backward(&self, trace: &Trace, grad_logits: &ClipTensor) -> Result<Gradients> {
        trace.logits.expect_same_shape(grad_logits)?;
        let layout = &self.layout;
        let mut grads: Vec<Option<WeightSet>> = vec![None; self.layers.len()];
        let mut skips: Vec<Option<ClipTensor>> = vec![None; layout.encoder.len() + 1];
        let encoder_out = |k: usize| if k == 0 { &trace.input } else { &trace.encoder[k - 1].1 };

        let g = trilinear_upsample_backward(grad_logits, trace.head.shape())?;
        let b = self.conv_back(layout.head, trace.features(), &g)?;
        grads[layout.head] = Some(b.weights);
        let mut g = b.input;

        for ((cfg, sl), st) in self.config.decoder.stages.iter().zip(&layout.stages).zip(&trace.stages).rev() {
            let gr = relu_backward(&st.output, &g);
            let b = self.conv_back(sl.conv, &st.concat, &gr)?;
            grads[sl.conv] = Some(b.weights);
            let up_channels = st.input_shape.c;
            let gup = if let (Some(k), Some(p)) = (cfg.skip, sl.project) {
                let gproj = b.input.slice_channels(up_channels, cfg.skip_channels)?;
                let pb = self.conv_back(p, encoder_out(k), &gproj)?;
                grads[p] = Some(pb.weights);
                accumulate(&mut skips[k], pb.input)?;
                b.input.slice_channels(0, up_channels)?
            } else {
                b.input
            };
            g = trilinear_upsample_backward(&gup, st.input_shape)?;
        }

        let feat = trace.encoder_output();
        let fb = self.conv_back(layout.fuse, &trace.concat, &g)?;
        grads[layout.fuse] = Some(fb.weights);
        let gcat = fb.input;
        let width = self.layers[layout.fuse].spec.channels_in / self.config.pyramid.branch_count();
        let mut gfeat: Option<ClipTensor> = None;
        for (j, &bi) in layout.branches.iter().enumerate() {
            let gb = relu_backward(&trace.branches[j], &gcat.slice_channels(j * width, width)?);
            let r = self.conv_back(bi, feat, &gb)?;
            grads[bi] = Some(r.weights);
            accumulate(&mut gfeat, r.input)?;
        }
        if let (Some(f), Some((pooled, out))) = (layout.frame, &trace.frame) {
            let gb = gcat.slice_channels(layout.branches.len() * width, width)?;
            let gr = relu_backward(out, &broadcast_spatial_backward(&gb));
            let r = self.conv_back(f, pooled, &gr)?;
            grads[f] = Some(r.weights);
            accumulate(&mut gfeat, avg_pool_spatial_full_backward(&r.input, feat.shape())?)?;
        }

        let mut g = gfeat.expect("pyramid has branches");
        for k in (1..=layout.encoder.len()).rev() {
            if let Some(s) = skips[k].take() {
                g = g.add(&s)?;
            }
            let [si, ti] = layout.encoder[k - 1];
            let (mid, out) = &trace.encoder[k - 1];
            let tb = self.conv_back(ti, mid, &relu_backward(out, &g))?;
            grads[ti] = Some(tb.weights);
            let sb = self.conv_back(si, encoder_out(k - 1), &relu_backward(mid, &tb.input))?;
            grads[si] = Some(sb.weights);
            g = sb.input;
        }
        if let Some(s) = skips[0].take() {
            g = g.add(&s)?;
        }
        let weights = grads.into_iter().map(|w| w.expect("every layer reached")).collect();
        Ok(Gradients { weights, input: g })
    }

    /// Mean per-pixel cross-entropy against `labels` and its gradients.
    pub fn loss_and_gradients(&self, clip: &ClipTensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let trace = self.forward_traced(clip)?;
        let (loss, g) = softmax_ce_loss(&trace.logits, labels)?;
        Ok((loss, self.backward(&trace, &g)?))
    }

    /// Weights and config as a named-array archive.
    pub fn to_archive(&self) -> Archive {
        Archive {
            metadata: self.config.to_toml(),
            entries: self.named_arrays().into_iter().map(|(n, a)| (n, a.clone())).collect(),
        }
    }

    pub fn from_archive(archive: &Archive) -> Result<Self> {
        let config = NetworkConfig::from_toml(&archive.metadata)?;
        let mut net = Self::zeros(config)?;
        let mut found = 0;
        let mut fill = |key: String, a: &mut Array| -> Result<()> {
            let (_, stored) = archive
                .entries
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
            stored.expect_dims(a.dims(), &key)?;
            *a = stored.clone();
            found += 1;
            Ok(())
        };
        for (layer, w) in net.layers.iter().zip(&mut net.weights) {
            let names = w.array_names();
            for (name, a) in names.into_iter().zip(w.arrays_mut()) {
                fill(format!("{}.{name}", layer.name), a)?;
            }
        }
        if let Some(head) = &mut net.action {
            for (name, a) in head.arrays_mut() {
                fill(format!("action.{name}"), a)?;
            }
        }
        if found != archive.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} arrays, network uses {found}",
                archive.entries.len()
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_archive(path, &self.to_archive())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&read_archive(path)?)
    }
}
