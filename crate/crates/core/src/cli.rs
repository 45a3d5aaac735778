//! Command-line front end: `synth`, `train`, `segment`, `cost-report` and `bench`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cost::{
    cost_channelwise, cost_pointwise, cost_r2plus1d, cost_separable, cost_standard, network_cost, CostReport,
};
use crate::format::{read_clip, write_clip};
use crate::kernels::{conv_forward, m_prime, measured_macs, ConvKind, ConvSpec, CountMode, WeightSet};
use crate::network::{
    evaluate, foreground_masks, ConvVariant, ExperimentConfig, Network, NetworkConfig, Sample, Trainer,
};
use crate::postproc::{bbox_from_mask, connected_components, max_area_region, Connectivity};
use crate::synth::{generate, read_dataset, write_dataset, ObjectKind, SynthSpec};
use crate::tensor::{ClipTensor, TensorShape};

#[derive(Debug, Parser)]
#[command(name = "sepconv3d", version, about = "Separable 3D convolutions, cost model and video segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic moving-object dataset.
    Synth(SynthArgs),
    /// Train a segmentation network on a dataset directory.
    Train(TrainArgs),
    /// Predict a per-pixel class mask for one clip.
    Segment(SegmentArgs),
    /// Analytic MACs, ops, parameters and activation memory per conv variant.
    CostReport(CostArgs),
    /// Time one convolution kernel and count its MACs.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with synthetic dataset settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<ObjectArg>,
    #[arg(long)]
    pub max_speed: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ObjectArg {
    Rectangle,
    Disc,
    Alternating,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment TOML (network and training sections); the toy setup when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `synth`.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub variant: Option<ConvVariant>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip file `(H, W, T, C)`.
    #[arg(long)]
    pub input: PathBuf,
    /// Mask file `(H, W, T, 1)` holding class indices.
    #[arg(long)]
    pub out: PathBuf,
    /// Print the box of the largest foreground region of each frame.
    #[arg(long)]
    pub boxes: bool,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Experiment or network TOML; the full-width configuration when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input clip size as `HxWxT`.
    #[arg(long, default_value = "320x320x8", value_parser = parse_dims::<3>)]
    pub input: [usize; 3],
    /// Variants to report; all three when omitted.
    #[arg(long, value_delimiter = ',')]
    pub variant: Vec<ConvVariant>,
    /// Also print one row per layer.
    #[arg(long)]
    pub layers: bool,
    /// Write the machine-readable lines to this file as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Standard,
    Channelwise,
    Pointwise,
    Separable,
    R2plus1d,
}

impl KernelArg {
    fn kind(self) -> ConvKind {
        match self {
            KernelArg::Standard => ConvKind::Standard,
            KernelArg::Channelwise => ConvKind::Channelwise,
            KernelArg::Pointwise => ConvKind::Pointwise,
            KernelArg::Separable => ConvKind::Separable,
            KernelArg::R2plus1d => ConvKind::R2plus1d,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, default_value = "separable")]
    pub kernel: KernelArg,
    /// Input size as `HxWxTxC`.
    #[arg(long, default_value = "32x32x8x64", value_parser = parse_dims::<4>)]
    pub dims: [usize; 4],
    /// Output channels; same as input when omitted.
    #[arg(long)]
    pub channels_out: Option<usize>,
    /// Cubic kernel size.
    #[arg(long, default_value_t = 3)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub dilation: usize,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_dims<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let dims: [usize; N] = parts.try_into().map_err(|_| format!("expected {N} sizes separated by 'x'"))?;
    if dims.contains(&0) {
        return Err("sizes must be positive".into());
    }
    Ok(dims)
}

/// Parses `args` (program name first) and runs the command, writing log lines to `out`.
pub fn run<I, T>(args: I, out: &mut impl Write) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    execute(Cli::try_parse_from(args)?, out)
}

pub fn execute(cli: Cli, out: &mut impl Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Segment(a) => segment(a, out),
        Command::CostReport(a) => cost_report(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn synth(a: SynthArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let mut spec = match &a.config {
        Some(p) => toml::from_str::<SynthSpec>(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { spec.$field = v; })* };
    }
    set!(seed, clips, height, width, frames, max_speed, noise);
    if let Some(k) = a.kind {
        spec.kind = match k {
            ObjectArg::Rectangle => ObjectKind::Rectangle,
            ObjectArg::Disc => ObjectKind::Disc,
            ObjectArg::Alternating => ObjectKind::Alternating,
        };
    }
    let clips = generate(&spec)?;
    write_dataset(&a.out, &clips)?;
    for (i, c) in clips.iter().enumerate() {
        let fg = c.mask.data().iter().filter(|&&v| v > 0.5).count();
        writeln!(out, "clip={i} dims={} foreground={fg}", c.clip.shape())?;
    }
    writeln!(out, "wrote {} clips to {}", clips.len(), a.out.display())?;
    Ok(())
}

fn load_experiment(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_toml(&read_text(p)?).with_context(|| format!("parsing {}", p.display())),
        None => Ok(ExperimentConfig::toy()),
    }
}

fn train(a: TrainArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let mut cfg = load_experiment(a.config.as_deref())?;
    if let Some(v) = a.variant {
        cfg.network.conv_variant = v;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let data = read_dataset(&a.data)?
        .into_iter()
        .map(|c| Sample::from_mask(c.clip, &c.mask))
        .collect::<crate::Result<Vec<_>>>()?;
    for (i, s) in data.iter().enumerate() {
        let sh = s.clip.shape();
        cfg.network.plan([sh.h, sh.w, sh.t]).with_context(|| format!("clip {i} does not fit the network"))?;
    }
    let network = Network::init(cfg.network.clone(), a.seed)?;
    writeln!(
        out,
        "variant={} parameters={} clips={} epochs={}",
        cfg.network.conv_variant,
        network.parameter_count(),
        data.len(),
        cfg.train.epochs
    )?;
    let mut trainer = Trainer::new(network, cfg.train.clone(), a.seed)?;
    for _ in 0..cfg.train.epochs {
        let s = trainer.train_epoch(&data)?;
        writeln!(out, "epoch={} lr={:.6e} loss={:.6}", s.epoch, s.learning_rate, s.loss)?;
    }
    let network = trainer.into_network();
    let eval = evaluate(&network, &data)?;
    writeln!(out, "accuracy={:.6} iou={:.6}", eval.accuracy, eval.mean_iou)?;
    network.save(&a.out)?;
    writeln!(out, "saved {}", a.out.display())?;
    Ok(())
}

fn segment(a: SegmentArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let network = Network::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let clip = read_clip(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let s = clip.shape();
    let trace = network.forward_traced(&clip)?;
    let classes = crate::kernels::argmax_classes(trace.logits());
    let mask = ClipTensor::from_vec(s.with_channels(1), classes.iter().map(|&c| c as f64).collect())?;
    write_clip(&a.out, &mask)?;
    let fg = classes.iter().filter(|&&c| c != 0).count();
    writeln!(out, "dims={} foreground={fg}", mask.shape())?;
    if a.boxes {
        for (t, m) in foreground_masks(trace.logits()).iter().enumerate() {
            let labeled = connected_components(m, Connectivity::Eight);
            match max_area_region(&labeled) {
                Some(r) => {
                    let b = bbox_from_mask(&labeled.region_mask(r.label))?;
                    writeln!(
                        out,
                        "frame={t} top={} left={} bottom={} right={} area={}",
                        b.top, b.left, b.bottom, b.right, r.area
                    )?;
                }
                None => writeln!(out, "frame={t} empty")?,
            }
        }
    }
    if let Some(head) = network.action_head() {
        let action = head.forward(trace.features(), &foreground_masks(trace.logits()))?;
        writeln!(out, "action class={} fallback_frames={}", action.class(), action.fallback_frames.len())?;
    }
    Ok(())
}

fn cost_report(a: CostArgs, out: &mut impl Write) -> anyhow::Result<()> {
    let base = match &a.config {
        Some(p) => {
            let text = read_text(p)?;
            match ExperimentConfig::from_toml(&text) {
                Ok(e) => e.network,
                Err(_) => NetworkConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?,
            }
        }
        None => NetworkConfig::full_width(),
    };
    let variants = if a.variant.is_empty() { ConvVariant::ALL.to_vec() } else { a.variant.clone() };
    let standard = network_cost(&base.clone().with_variant(ConvVariant::Standard), a.input)?;
    let reports = variants
        .iter()
        .map(|&v| Ok((v, network_cost(&base.clone().with_variant(v), a.input)?)))
        .collect::<anyhow::Result<Vec<(ConvVariant, CostReport)>>>()?;

    let [h, w, t] = a.input;
    writeln!(out, "input={h}x{w}x{t} (pyramid pooling, decoder and head)")?;
    writeln!(
        out,
        "{:<22} {:<11} {:>16} {:>16} {:>12} {:>16} {:>8}",
        "layer", "variant", "MACs", "ops", "params", "act_bytes", "ratio"
    )?;
    let mut machine = Vec::new();
    for (v, r) in &reports {
        if a.layers {
            for l in &r.per_layer {
                writeln!(
                    out,
                    "{:<22} {:<11} {:>16} {:>16} {:>12} {:>16}",
                    l.name,
                    l.kind,
                    l.macs,
                    l.ops(),
                    l.parameters,
                    l.activation_bytes
                )?;
                machine.push(format!(
                    "layer name={} variant={v} kind={} macs={} ops={} params={} activation_bytes={}",
                    l.name,
                    l.kind,
                    l.macs,
                    l.ops(),
                    l.parameters,
                    l.activation_bytes
                ));
            }
        }
        let ratio = r.ops as f64 / standard.ops as f64;
        writeln!(
            out,
            "{:<22} {:<11} {:>16} {:>16} {:>12} {:>16} {:>8.4}",
            "total", v, r.macs, r.ops, r.parameters, r.activation_bytes, ratio
        )?;
        machine.push(format!(
            "total variant={v} macs={} ops={} params={} activation_bytes={} ratio={ratio:.6}",
            r.macs, r.ops, r.parameters, r.activation_bytes
        ));
    }
    for line in &machine {
        writeln!(out, "{line}")?;
    }
    if let Some(p) = &a.out {
        fs::write(p, machine.join("\n") + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn bench(a: BenchArgs, out: &mut impl Write) -> anyhow::Result<()> {
    if a.repetitions == 0 {
        bail!("repetitions must be positive");
    }
    let [h, w, t, c] = a.dims;
    let n = a.channels_out.unwrap_or(c);
    let kind = a.kernel.kind();
    let size = if kind == ConvKind::Pointwise { 1 } else { a.size };
    let spec = ConvSpec::cube(size, c, if kind == ConvKind::Channelwise { c } else { n })
        .with_dilation(a.dilation, a.dilation);
    spec.validate()?;
    let mp = m_prime(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut weights = WeightSet::zeros(kind, &spec, mp, false);
    for arr in weights.arrays_mut() {
        for v in arr.data_mut() {
            *v = rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
    }
    let shape = TensorShape::new(h, w, t, c)?;
    let input = ClipTensor::from_vec(
        shape,
        (0..shape.numel()).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect(),
    )?;
    let size3 = [h, w, t];
    let predicted = match kind {
        ConvKind::Standard => cost_standard(size3, &spec)?,
        ConvKind::Channelwise => cost_channelwise(size3, &spec)?,
        ConvKind::Pointwise => cost_pointwise(size3, &spec)?,
        ConvKind::Separable => cost_separable(size3, &spec)?,
        ConvKind::R2plus1d => cost_r2plus1d(size3, &spec, mp)?,
    };
    let mut times = Vec::with_capacity(a.repetitions);
    let mut macs = 0;
    for rep in 0..a.repetitions {
        let start = Instant::now();
        let (result, counted) =
            measured_macs(CountMode::AllTaps, |ctx| conv_forward(&input, &weights, &spec, Some(ctx)));
        let secs = start.elapsed().as_secs_f64();
        result?;
        macs = counted;
        times.push(secs);
        writeln!(out, "rep={rep} kernel={kind} seconds={secs:.6} macs={counted}")?;
    }
    times.sort_by(f64::total_cmp);
    let median = times[times.len() / 2];
    writeln!(out, "summary kernel={kind} median_seconds={median:.6} measured_macs={macs} predicted_macs={predicted}")?;
    Ok(())
}
