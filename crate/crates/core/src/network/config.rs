use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ConvKind;

/// Convolution family used by the pyramid pooling and decoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvVariant {
    Standard,
    R2plus1d,
    #[default]
    Separable,
}

impl ConvVariant {
    pub const ALL: [ConvVariant; 3] = [ConvVariant::Standard, ConvVariant::R2plus1d, ConvVariant::Separable];

    pub fn kind(self) -> ConvKind {
        match self {
            ConvVariant::Standard => ConvKind::Standard,
            ConvVariant::R2plus1d => ConvKind::R2plus1d,
            ConvVariant::Separable => ConvKind::Separable,
        }
    }
}

impl fmt::Display for ConvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvVariant::Standard => "standard",
            ConvVariant::R2plus1d => "r2plus1d",
            ConvVariant::Separable => "separable",
        })
    }
}

impl FromStr for ConvVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ConvVariant::Standard),
            "r2plus1d" => Ok(ConvVariant::R2plus1d),
            "separable" => Ok(ConvVariant::Separable),
            other => {
                Err(Error::Config(format!("unknown conv variant {other:?} (expected standard, r2plus1d or separable)")))
            }
        }
    }
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn three() -> usize {
    3
}

fn yes() -> bool {
    true
}

fn unit_scale() -> [usize; 3] {
    [1, 1, 1]
}

/// One encoder block: a `k×k×1` spatial convolution, a rectifier, a
/// `1×1×k_t` temporal convolution and another rectifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderBlock {
    pub channels: usize,
    #[serde(default = "two")]
    pub spatial_stride: usize,
    #[serde(default = "one")]
    pub temporal_stride: usize,
    #[serde(default = "one")]
    pub temporal_dilation: usize,
    #[serde(default = "three")]
    pub spatial_kernel: usize,
    #[serde(default = "three")]
    pub temporal_kernel: usize,
}

impl EncoderBlock {
    pub fn new(channels: usize, spatial_stride: usize, temporal_stride: usize, temporal_dilation: usize) -> Self {
        Self { channels, spatial_stride, temporal_stride, temporal_dilation, spatial_kernel: 3, temporal_kernel: 3 }
    }

    /// `(temporal stride, temporal dilation)` actually applied. With dilation
    /// switched off a dilated block falls back to temporal stride 2.
    pub fn temporal_schedule(&self, dilation_enabled: bool) -> (usize, usize) {
        if dilation_enabled || self.temporal_dilation == 1 {
            (self.temporal_stride, self.temporal_dilation)
        } else {
            (self.temporal_stride.max(2), 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PyramidConfig {
    pub spatial_rates: Vec<usize>,
    #[serde(default = "three")]
    pub kernel: usize,
    #[serde(default = "yes")]
    pub include_unit_branch: bool,
    #[serde(default = "yes")]
    pub include_frame_features: bool,
    /// Defaults to a quarter of the encoder output width.
    #[serde(default)]
    pub branch_channels: Option<usize>,
    /// Defaults to half of the encoder output width.
    #[serde(default)]
    pub fuse_channels: Option<usize>,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            spatial_rates: vec![6, 12, 18],
            kernel: 3,
            include_unit_branch: true,
            include_frame_features: true,
            branch_channels: None,
            fuse_channels: None,
        }
    }
}

impl PyramidConfig {
    pub fn branch_count(&self) -> usize {
        self.spatial_rates.len() + self.include_unit_branch as usize + self.include_frame_features as usize
    }

    pub fn branch_width(&self, input_channels: usize) -> usize {
        self.branch_channels.unwrap_or((input_channels / 4).max(1))
    }

    pub fn fuse_width(&self, input_channels: usize) -> usize {
        self.fuse_channels.unwrap_or((input_channels / 2).max(1))
    }

    /// Dilation rates in branch order (ascending).
    pub fn sorted_rates(&self) -> Vec<usize> {
        let mut rates = self.spatial_rates.clone();
        rates.sort_unstable();
        rates
    }

    pub fn validate(&self) -> Result<()> {
        let rates = self.sorted_rates();
        if rates.contains(&0) {
            return Err(Error::Config("pyramid rates must be positive".into()));
        }
        if rates.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("pyramid rates {:?} are not distinct", self.spatial_rates)));
        }
        if self.kernel == 0 {
            return Err(Error::Config("pyramid kernel must be positive".into()));
        }
        if self.branch_count() == 0 {
            return Err(Error::Config("pyramid has no branches".into()));
        }
        if self.branch_channels == Some(0) || self.fuse_channels == Some(0) {
            return Err(Error::Config("pyramid widths must be positive".into()));
        }
        Ok(())
    }

    /// The pyramid settings compared in the ablation study, by row label.
    pub fn ablation_presets() -> Vec<(&'static str, PyramidConfig)> {
        let row = |rates: &[usize], ff: bool| PyramidConfig {
            spatial_rates: rates.to_vec(),
            include_frame_features: ff,
            ..PyramidConfig::default()
        };
        vec![
            ("(6, 12, 18)", row(&[6, 12, 18], false)),
            ("(6, 12, 18) + FF", row(&[6, 12, 18], true)),
            ("(6, 12, 18, 24)", row(&[6, 12, 18, 24], false)),
            ("(8, 16, 24)", row(&[8, 16, 24], false)),
        ]
    }
}

/// One decoder stage: trilinear upsampling by `scale`, concatenation with a
/// projected encoder skip, then a convolution and a rectifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderStage {
    pub scale: [usize; 3],
    /// `0` is the input clip, `k` the output of encoder block `k`.
    #[serde(default)]
    pub skip: Option<usize>,
    #[serde(default)]
    pub skip_channels: usize,
    pub channels: usize,
    #[serde(default = "three")]
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub stages: Vec<DecoderStage>,
    /// Trilinear upsampling applied to the logits after the head.
    #[serde(default = "unit_scale")]
    pub output_scale: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionHeadConfig {
    pub classes: usize,
    /// Side of the square crop fed to the classifier.
    #[serde(default = "default_crop")]
    pub crop: usize,
}

fn default_crop() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "three")]
    pub input_channels: usize,
    #[serde(default = "two")]
    pub classes: usize,
    #[serde(default)]
    pub conv_variant: ConvVariant,
    #[serde(default = "yes")]
    pub temporal_dilation: bool,
    pub encoder: Vec<EncoderBlock>,
    pub pyramid: PyramidConfig,
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub action: Option<ActionHeadConfig>,
}

impl NetworkConfig {
    /// Small network for 64×64×8 clips: a 4×4×4 final map, widths up to 64.
    pub fn toy() -> Self {
        Self {
            input_channels: 3,
            classes: 2,
            conv_variant: ConvVariant::Separable,
            temporal_dilation: true,
            encoder: vec![
                EncoderBlock::new(8, 2, 1, 1),
                EncoderBlock::new(16, 2, 2, 1),
                EncoderBlock::new(32, 2, 1, 2),
                EncoderBlock::new(64, 2, 1, 4),
            ],
            pyramid: PyramidConfig {
                spatial_rates: vec![1, 2, 3],
                branch_channels: Some(16),
                fuse_channels: Some(32),
                ..PyramidConfig::default()
            },
            decoder: DecoderConfig {
                stages: vec![
                    DecoderStage { scale: [2, 2, 1], skip: Some(3), skip_channels: 8, channels: 32, kernel: 3 },
                    DecoderStage { scale: [2, 2, 1], skip: Some(2), skip_channels: 8, channels: 16, kernel: 3 },
                    DecoderStage { scale: [2, 2, 2], skip: Some(1), skip_channels: 8, channels: 16, kernel: 3 },
                    DecoderStage { scale: [2, 2, 1], skip: Some(0), skip_channels: 8, channels: 32, kernel: 1 },
                ],
                output_scale: [1, 1, 1],
            },
            action: None,
        }
    }

    /// Full-width layout for 320×320×8 clips: a 20×20×4×512 final map,
    /// pyramid rates (6, 12, 18) with frame features, two decoder stages to
    /// quarter resolution and a ×4 logit upsampling.
    pub fn full_width() -> Self {
        Self {
            input_channels: 3,
            classes: 2,
            conv_variant: ConvVariant::Separable,
            temporal_dilation: true,
            encoder: vec![
                EncoderBlock::new(64, 2, 1, 1),
                EncoderBlock::new(64, 1, 1, 1),
                EncoderBlock::new(128, 2, 2, 1),
                EncoderBlock::new(256, 2, 1, 2),
                EncoderBlock::new(512, 2, 1, 4),
            ],
            pyramid: PyramidConfig::default(),
            decoder: DecoderConfig {
                stages: vec![
                    DecoderStage { scale: [2, 2, 1], skip: Some(4), skip_channels: 48, channels: 256, kernel: 3 },
                    DecoderStage { scale: [2, 2, 1], skip: Some(3), skip_channels: 48, channels: 256, kernel: 3 },
                ],
                output_scale: [4, 4, 2],
            },
            action: None,
        }
    }

    pub fn with_variant(mut self, variant: ConvVariant) -> Self {
        self.conv_variant = variant;
        self
    }

    /// Product of spatial strides; input `H` and `W` must be multiples of it.
    pub fn total_spatial_stride(&self) -> usize {
        self.encoder.iter().map(|b| b.spatial_stride).product()
    }

    pub fn encoder_width(&self) -> usize {
        self.encoder.last().map_or(self.input_channels, |b| b.channels)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    /// Structural checks that do not depend on the input size.
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.encoder.is_empty() {
            return Err(Error::Config("encoder has no blocks".into()));
        }
        for (i, b) in self.encoder.iter().enumerate() {
            let fields = [
                b.channels,
                b.spatial_stride,
                b.temporal_stride,
                b.temporal_dilation,
                b.spatial_kernel,
                b.temporal_kernel,
            ];
            if fields.contains(&0) {
                return Err(Error::Config(format!("encoder block {} has a zero field", i + 1)));
            }
        }
        self.pyramid.validate()?;
        if self.decoder.stages.is_empty() {
            return Err(Error::Config("decoder has no stages".into()));
        }
        for (i, s) in self.decoder.stages.iter().enumerate() {
            if s.channels == 0 || s.kernel == 0 || s.scale.contains(&0) {
                return Err(Error::Config(format!("decoder stage {} has a zero field", i + 1)));
            }
            if let Some(k) = s.skip {
                if k > self.encoder.len() {
                    return Err(Error::Config(format!(
                        "decoder stage {} skips from block {k} but the encoder has {}",
                        i + 1,
                        self.encoder.len()
                    )));
                }
                if s.skip_channels == 0 {
                    return Err(Error::Config(format!("decoder stage {} needs skip_channels > 0", i + 1)));
                }
            }
        }
        if self.decoder.output_scale.contains(&0) {
            return Err(Error::Config("output_scale factors must be positive".into()));
        }
        if let Some(a) = &self.action {
            if a.classes == 0 || a.crop == 0 {
                return Err(Error::Config("action head needs positive classes and crop".into()));
            }
        }
        Ok(())
    }
}

/// Optimizer, schedule and augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Range of the random spatial rescaling ratio; `[1, 1]` disables it.
    pub scale_jitter: [f64; 2],
    pub horizontal_flip: bool,
    pub clip_length: usize,
    /// Square random crop applied after rescaling when the clip is large enough.
    pub crop: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay_rate: 0.95,
            decay_every: 1,
            epochs: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            scale_jitter: [0.5, 2.0],
            horizontal_flip: true,
            clip_length: 8,
            crop: None,
        }
    }
}

impl TrainConfig {
    /// Settings for the toy network: the default schedule, flips only.
    pub fn toy() -> Self {
        Self { epochs: 200, scale_jitter: [1.0, 1.0], ..Self::default() }
    }

    /// `lr₀ · decay^⌊epoch / decay_every⌋`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_rate.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate {} not in (0, 1]", self.decay_rate)));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be positive".into()));
        }
        let [lo, hi] = self.scale_jitter;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Config(format!("scale_jitter {:?} is not a positive range", self.scale_jitter)));
        }
        if self.clip_length == 0 || self.crop == Some(0) {
            return Err(Error::Config("clip_length and crop must be positive".into()));
        }
        Ok(())
    }
}

/// Contents of a config file: a `[network]` table and an optional `[train]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn toy() -> Self {
        Self { network: NetworkConfig::toy(), train: TrainConfig::toy() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.network.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }
}
