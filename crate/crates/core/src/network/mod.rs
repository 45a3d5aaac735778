//! Segmentation network: dilated encoder blocks, pyramid pooling, a
//! trilinear-upsampling decoder with skip connections, and the training loop.

mod action;
mod config;
mod layout;
mod model;
mod train;

pub use action::{ActionHead, ActionOutput};
pub use config::{
    ActionHeadConfig, ConvVariant, DecoderConfig, DecoderStage, EncoderBlock, ExperimentConfig, NetworkConfig,
    PyramidConfig, TrainConfig,
};
pub use layout::{LayerSpec, Part, Plan, PlannedLayer};
pub use model::{foreground_masks, Gradients, Network, Trace};
pub use train::{augment, evaluate, flip_horizontal, rescale, Adam, EpochStats, Evaluation, Sample, Trainer};
