use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::resize_trilinear;
use crate::postproc::{bbox_from_mask, connected_components, max_area_region, BBox, Connectivity, Mask};
use crate::tensor::{Array, ClipTensor, TensorShape};

use super::config::ActionHeadConfig;

/// Crops the feature map around the largest foreground region of each
/// frame, resizes the crop to `R × R`, averages over frames and applies a
/// linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionHead {
    crop: usize,
    channels: usize,
    weights: Array,
    bias: Array,
}

/// Per-clip logits and the boxes used per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutput {
    pub logits: Vec<f64>,
    /// Box in feature-map coordinates, per frame.
    pub boxes: Vec<BBox>,
    /// Frames with no foreground, where the whole frame was used instead.
    pub fallback_frames: Vec<usize>,
}

impl ActionOutput {
    pub fn used_fallback(&self) -> bool {
        !self.fallback_frames.is_empty()
    }

    /// Highest-scoring class; ties go to the lowest index.
    pub fn class(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.logits.iter().enumerate() {
            if v > self.logits[best] {
                best = i;
            }
        }
        best
    }
}

/// Maps an inclusive box from an `from_h × from_w` grid onto a `to_h × to_w` grid.
fn rescale_box(b: BBox, from: [usize; 2], to: [usize; 2]) -> BBox {
    let lo = |v: usize, f: usize, t: usize| v * t / f;
    let hi = |v: usize, f: usize, t: usize| ((v + 1) * t).div_ceil(f) - 1;
    BBox {
        top: lo(b.top, from[0], to[0]),
        left: lo(b.left, from[1], to[1]),
        bottom: hi(b.bottom, from[0], to[0]),
        right: hi(b.right, from[1], to[1]),
    }
}

impl ActionHead {
    pub fn zeros(cfg: &ActionHeadConfig, channels: usize) -> Self {
        let inputs = cfg.crop * cfg.crop * channels;
        Self {
            crop: cfg.crop,
            channels,
            weights: Array::zeros(&[inputs, cfg.classes]),
            bias: Array::zeros(&[cfg.classes]),
        }
    }

    pub fn init(cfg: &ActionHeadConfig, channels: usize, rng: &mut impl Rng) -> Self {
        let mut head = Self::zeros(cfg, channels);
        let fan_in = head.weights.dims()[0] as f64;
        let normal = Normal::new(0.0, (1.0 / fan_in).sqrt()).expect("finite std");
        for v in head.weights.data_mut() {
            *v = normal.sample(rng);
        }
        head
    }

    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn arrays(&self) -> [(&'static str, &Array); 2] {
        [("weights", &self.weights), ("bias", &self.bias)]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut Array); 2] {
        [("weights", &mut self.weights), ("bias", &mut self.bias)]
    }

    /// Region `bbox` of frame `t`, resized bilinearly to `R × R × 1 × C`.
    pub fn crop_frame(&self, features: &ClipTensor, t: usize, bbox: BBox) -> Result<ClipTensor> {
        let s = features.shape();
        if bbox.bottom >= s.h || bbox.right >= s.w || t >= s.t {
            return Err(Error::Shape(format!("box {bbox:?} in frame {t} outside {s}")));
        }
        let region = ClipTensor::from_fn(TensorShape::new(bbox.height(), bbox.width(), 1, s.c)?, |h, w, _, c| {
            features.get(bbox.top + h, bbox.left + w, t, c)
        });
        resize_trilinear(&region, [self.crop, self.crop, 1])
    }

    /// Mean crop over frames, with the boxes used and the frames that fell back.
    pub fn pooled_crop(&self, features: &ClipTensor, masks: &[Mask]) -> Result<(ClipTensor, Vec<BBox>, Vec<usize>)> {
        let s = features.shape();
        if s.c != self.channels {
            return Err(Error::Mismatch(format!("features have {} channels, head expects {}", s.c, self.channels)));
        }
        if masks.len() != s.t {
            return Err(Error::Mismatch(format!("{} masks for {} frames", masks.len(), s.t)));
        }
        let whole = BBox { top: 0, left: 0, bottom: s.h - 1, right: s.w - 1 };
        let mut sum = ClipTensor::zeros(TensorShape::new(self.crop, self.crop, 1, s.c)?);
        let (mut boxes, mut fallback) = (Vec::new(), Vec::new());
        for (t, mask) in masks.iter().enumerate() {
            let labeled = connected_components(mask, Connectivity::Eight);
            let bbox = match max_area_region(&labeled) {
                Some(r) => {
                    rescale_box(bbox_from_mask(&labeled.region_mask(r.label))?, [mask.height, mask.width], [s.h, s.w])
                }
                None => {
                    fallback.push(t);
                    whole
                }
            };
            sum = sum.add(&self.crop_frame(features, t, bbox)?)?;
            boxes.push(bbox);
        }
        Ok((sum.scale(1.0 / s.t as f64), boxes, fallback))
    }

    pub fn forward(&self, features: &ClipTensor, masks: &[Mask]) -> Result<ActionOutput> {
        let (crop, boxes, fallback_frames) = self.pooled_crop(features, masks)?;
        Ok(ActionOutput { logits: self.classify(crop.data()), boxes, fallback_frames })
    }

    fn classify(&self, x: &[f64]) -> Vec<f64> {
        let k = self.classes();
        let mut logits = self.bias.data().to_vec();
        for (xi, row) in x.iter().zip(self.weights.data().chunks_exact(k)) {
            for (l, &wv) in logits.iter_mut().zip(row) {
                *l += xi * wv;
            }
        }
        logits
    }

    /// Cross-entropy against `label` with gradients for the weights and bias.
    pub fn loss_and_gradients(
        &self,
        features: &ClipTensor,
        masks: &[Mask],
        label: usize,
    ) -> Result<(f64, Array, Array)> {
        let k = self.classes();
        if label >= k {
            return Err(Error::Label { label, classes: k });
        }
        let (crop, _, _) = self.pooled_crop(features, masks)?;
        let logits = self.classify(crop.data());
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let denom: f64 = exp.iter().sum();
        let loss = denom.ln() - (logits[label] - max);
        let mut dz: Vec<f64> = exp.iter().map(|e| e / denom).collect();
        dz[label] -= 1.0;
        let gw = crop.data().iter().flat_map(|&xi| dz.iter().map(move |&d| xi * d)).collect();
        Ok((loss, Array::from_vec(self.weights.dims(), gw)?, Array::from_vec(&[k], dz)?))
    }
}
