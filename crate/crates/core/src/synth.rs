//! Moving-object clips with exact ground-truth masks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_clip, write_clip};
use crate::tensor::{ClipTensor, TensorShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Rectangle,
    Disc,
    /// Rectangles for even clip indices, discs for odd ones.
    Alternating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub clips: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub kind: ObjectKind,
    /// Rectangle `(height, width)` in pixels.
    pub rectangle: [usize; 2],
    pub radius: usize,
    /// Per-axis speed is drawn uniformly from `[-max_speed, max_speed]` pixels per frame.
    pub max_speed: f64,
    /// Standard deviation of the pixel noise as a fraction of 255.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            clips: 4,
            height: 64,
            width: 64,
            frames: 8,
            kind: ObjectKind::Alternating,
            rectangle: [24, 18],
            radius: 11,
            max_speed: 2.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

const BACKGROUND: f64 = 0.1;
const OBJECT: [f64; 3] = [0.9, 0.7, 0.5];

/// A rendered clip `(H, W, T, 3)` with pixel values in `[0, 255]` and its
/// `(H, W, T, 1)` mask holding `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip: ClipTensor,
    pub mask: ClipTensor,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::Config("synth dims and clip count must be positive".into()));
        }
        let rect_fits = self.rectangle[0] >= 1
            && self.rectangle[1] >= 1
            && self.rectangle[0] <= self.height
            && self.rectangle[1] <= self.width;
        let disc_fits = 2 * self.radius < self.height && 2 * self.radius < self.width;
        let fits = match self.kind {
            ObjectKind::Rectangle => rect_fits,
            ObjectKind::Disc => disc_fits,
            ObjectKind::Alternating => rect_fits && (self.clips < 2 || disc_fits),
        };
        if !fits {
            return Err(Error::Config("object does not fit in the frame".into()));
        }
        if !(self.max_speed >= 0.0 && self.max_speed.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("max_speed and noise must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn kind_of(&self, index: usize) -> ObjectKind {
        match self.kind {
            ObjectKind::Alternating if index.is_multiple_of(2) => ObjectKind::Rectangle,
            ObjectKind::Alternating => ObjectKind::Disc,
            k => k,
        }
    }
}

/// Top-left corners along one axis, kept inside `[0, limit]`.
fn trajectory(rng: &mut impl Rng, limit: usize, speed: f64, frames: usize) -> Vec<usize> {
    let travel = speed * (frames - 1) as f64;
    let lo = (-travel).max(0.0);
    let hi = limit as f64 - travel.max(0.0);
    let start = if lo < hi { rng.random_range(lo..=hi) } else { (limit as f64 / 2.0).floor() };
    (0..frames).map(|t| (start + speed * t as f64).round().clamp(0.0, limit as f64) as usize).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthClip>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise * 255.0).map_err(|e| Error::Config(e.to_string()))?;
    let (h, w, t) = (spec.height, spec.width, spec.frames);
    let mut out = Vec::with_capacity(spec.clips);
    for index in 0..spec.clips {
        let kind = spec.kind_of(index);
        let (eh, ew) = match kind {
            ObjectKind::Disc => (2 * spec.radius + 1, 2 * spec.radius + 1),
            _ => (spec.rectangle[0], spec.rectangle[1]),
        };
        let vy = rng.random_range(-spec.max_speed..=spec.max_speed);
        let vx = rng.random_range(-spec.max_speed..=spec.max_speed);
        let ys = trajectory(&mut rng, h - eh, vy, t);
        let xs = trajectory(&mut rng, w - ew, vx, t);
        let r = spec.radius as isize;
        let mask = ClipTensor::from_fn(TensorShape::new(h, w, t, 1)?, |y, x, f, _| {
            let (top, left) = (ys[f], xs[f]);
            let inside = match kind {
                ObjectKind::Disc => {
                    let dy = y as isize - (top as isize + r);
                    let dx = x as isize - (left as isize + r);
                    dy * dy + dx * dx <= r * r
                }
                _ => (top..top + eh).contains(&y) && (left..left + ew).contains(&x),
            };
            if inside {
                1.0
            } else {
                0.0
            }
        });
        let mut clip = ClipTensor::zeros(TensorShape::new(h, w, t, 3)?);
        for (site, px) in clip.data_mut().chunks_exact_mut(3).enumerate() {
            let fg = mask.data()[site] > 0.5;
            for (c, v) in px.iter_mut().enumerate() {
                let base = if fg { OBJECT[c] } else { BACKGROUND };
                *v = (base * 255.0 + noise.sample(&mut rng)).clamp(0.0, 255.0);
            }
        }
        out.push(SynthClip { clip, mask });
    }
    Ok(out)
}

pub fn clip_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("clip_{index:03}.vclp"))
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mask_{index:03}.vclp"))
}

pub fn write_dataset(dir: impl AsRef<Path>, clips: &[SynthClip]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (i, c) in clips.iter().enumerate() {
        write_clip(clip_path(dir, i), &c.clip)?;
        write_clip(mask_path(dir, i), &c.mask)?;
    }
    Ok(())
}

/// Reads `clip_000`, `mask_000`, … until the first missing index.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<SynthClip>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Empty(format!("dataset directory {} does not exist", dir.display())));
    }
    let mut out = Vec::new();
    while clip_path(dir, out.len()).exists() {
        let i = out.len();
        out.push(SynthClip { clip: read_clip(clip_path(dir, i))?, mask: read_clip(mask_path(dir, i))? });
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("no clips in {}", dir.display())));
    }
    Ok(out)
}
