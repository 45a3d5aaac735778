use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{resize_nearest_labels, resize_trilinear, WeightSet};
use crate::tensor::{ClipTensor, TensorShape};

use super::config::TrainConfig;
use super::model::Network;

/// A clip with one class label per `(h, w, t)` site in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip: ClipTensor,
    pub labels: Vec<usize>,
}

impl Sample {
    pub fn new(clip: ClipTensor, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != clip.shape().sites() {
            return Err(Error::Mismatch(format!("{} labels for clip {}", labels.len(), clip.shape())));
        }
        Ok(Self { clip, labels })
    }

    /// Labels from a single-channel mask, rounding each value to the nearest class.
    pub fn from_mask(clip: ClipTensor, mask: &ClipTensor) -> Result<Self> {
        let (cs, ms) = (clip.shape(), mask.shape());
        if ms.c != 1 || !cs.same_site_dims(&ms) {
            return Err(Error::Mismatch(format!("mask {ms} does not fit clip {cs}")));
        }
        if let Some(v) = mask.data().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Format(format!("mask value {v} is not a class index")));
        }
        let labels = mask.data().iter().map(|v| v.round() as usize).collect();
        Self::new(clip, labels)
    }

    fn dims(&self) -> [usize; 3] {
        let s = self.clip.shape();
        [s.h, s.w, s.t]
    }
}

/// Mirrors the width axis of clip and labels.
pub fn flip_horizontal(sample: &Sample) -> Sample {
    let s = sample.clip.shape();
    let clip = ClipTensor::from_fn(s, |h, w, t, c| sample.clip.get(h, s.w - 1 - w, t, c));
    let labels = (0..s.sites())
        .map(|i| {
            let (h, w, t) = (i / (s.w * s.t), (i / s.t) % s.w, i % s.t);
            sample.labels[(h * s.w + (s.w - 1 - w)) * s.t + t]
        })
        .collect();
    Sample { clip, labels }
}

/// Rescales the spatial extents by `ratio`, rounding each to a positive
/// multiple of `stride`; clip values are interpolated trilinearly and labels
/// by nearest neighbour.
pub fn rescale(sample: &Sample, ratio: f64, stride: usize) -> Result<Sample> {
    let [h, w, t] = sample.dims();
    let fit = |d: usize| (((d as f64 * ratio) / stride as f64).round() as usize).max(1) * stride;
    let size = [fit(h), fit(w), t];
    if size == [h, w, t] {
        return Ok(sample.clone());
    }
    Ok(Sample {
        clip: resize_trilinear(&sample.clip, size)?,
        labels: resize_nearest_labels(&sample.labels, [h, w, t], size),
    })
}

fn crop(sample: &Sample, top: usize, left: usize, size: usize) -> Sample {
    let s = sample.clip.shape();
    let shape = TensorShape { h: size, w: size, ..s };
    let clip = ClipTensor::from_fn(shape, |h, w, t, c| sample.clip.get(top + h, left + w, t, c));
    let mut labels = Vec::with_capacity(shape.sites());
    for h in 0..size {
        for w in 0..size {
            let base = ((top + h) * s.w + left + w) * s.t;
            labels.extend_from_slice(&sample.labels[base..base + s.t]);
        }
    }
    Sample { clip, labels }
}

/// Random rescale, optional crop and horizontal flip, applied identically
/// to clip and labels.
pub fn augment(sample: &Sample, cfg: &TrainConfig, stride: usize, rng: &mut impl Rng) -> Result<Sample> {
    let [lo, hi] = cfg.scale_jitter;
    let ratio = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut out = rescale(sample, ratio, stride)?;
    if let Some(size) = cfg.crop {
        let size = (size / stride).max(1) * stride;
        let [h, w, _] = out.dims();
        if h >= size && w >= size && (h > size || w > size) {
            let top = rng.random_range(0..=(h - size) / stride) * stride;
            let left = rng.random_range(0..=(w - size) / stride) * stride;
            out = crop(&out, top, left, size);
        }
    }
    if cfg.horizontal_flip && rng.random_bool(0.5) {
        out = flip_horizontal(&out);
    }
    Ok(out)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(network: &Network, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> =
            network.weights().iter().flat_map(|w| w.arrays().into_iter().map(|a| a.len())).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn update(&mut self, network: &mut Network, grads: &[WeightSet], lr: f64) -> Result<()> {
        if grads.len() != network.weights().len() {
            return Err(Error::Mismatch(format!(
                "{} gradient sets for {} layers",
                grads.len(),
                network.weights().len()
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut slot = 0;
        for (w, g) in network.weights_mut().iter_mut().zip(grads) {
            for (a, ga) in w.arrays_mut().into_iter().zip(g.arrays()) {
                if a.dims() != ga.dims() {
                    return Err(Error::Mismatch(format!("gradient {:?} for weights {:?}", ga.dims(), a.dims())));
                }
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                for (((p, &gi), mi), vi) in a.data_mut().iter_mut().zip(ga.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                    *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.epsilon);
                }
                slot += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
}

/// Network plus optimizer state; one Adam step per clip.
#[derive(Debug, Clone)]
pub struct Trainer {
    network: Network,
    optimizer: Adam,
    config: TrainConfig,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(network: Network, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&network, &config);
        Ok(Self { network, optimizer, config, epoch: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn into_network(self) -> Network {
        self.network
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `data` in a seeded random order; returns the mean loss.
    pub fn train_epoch(&mut self, data: &[Sample]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::Empty("training set is empty".into()));
        }
        let lr = self.config.learning_rate_at(self.epoch);
        let stride = self.network.config().total_spatial_stride();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for i in order {
            let sample = augment(&data[i], &self.config, stride, &mut self.rng)?;
            let (loss, grads) = self.network.loss_and_gradients(&sample.clip, &sample.labels)?;
            self.optimizer.update(&mut self.network, &grads.weights, lr)?;
            total += loss;
        }
        let stats = EpochStats { epoch: self.epoch, learning_rate: lr, loss: total / data.len() as f64 };
        self.epoch += 1;
        Ok(stats)
    }
}

/// Per-pixel accuracy and foreground IoU of the network's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_iou: f64,
    pub per_sample_iou: Vec<f64>,
}

/// Evaluates class 1 as foreground; a clip where both prediction and
/// ground truth are empty scores IoU 1.
pub fn evaluate(network: &Network, data: &[Sample]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let (mut accuracy, mut ious) = (0.0, Vec::with_capacity(data.len()));
    for s in data {
        let pred = network.predict(&s.clip)?;
        let correct = pred.iter().zip(&s.labels).filter(|(p, l)| p == l).count();
        accuracy += correct as f64 / pred.len() as f64;
        let pm: Vec<bool> = pred.iter().map(|&p| p == 1).collect();
        let gm: Vec<bool> = s.labels.iter().map(|&l| l == 1).collect();
        ious.push(crate::postproc::mask_iou(&pm, &gm)?);
    }
    let n = data.len() as f64;
    Ok(Evaluation { accuracy: accuracy / n, mean_iou: ious.iter().sum::<f64>() / n, per_sample_iou: ious })
}
