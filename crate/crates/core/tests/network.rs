mod support;

use proptest::prelude::*;
use rand::Rng;
use sepconv3d::cost::network_cost;
use sepconv3d::kernels::{ConvKind, CountMode, WeightSet};
use sepconv3d::network::{ConvVariant, Network, NetworkConfig, Part, PyramidConfig, Sample, TrainConfig, Trainer};
use sepconv3d::synth::{generate, SynthSpec};
use sepconv3d::{ClipTensor, TensorShape};
use support::{assemble_separable, central_diff, micro_network, random_clip, relative_error, rng};

fn randomize(net: &mut Network, seed: u64) {
    let mut r = rng(seed);
    for w in net.weights_mut() {
        for a in w.arrays_mut() {
            for v in a.data_mut() {
                *v = r.random_range(-1.0..1.0);
            }
        }
    }
}

fn flat(net: &Network) -> Vec<f64> {
    net.weights().iter().flat_map(|w| w.arrays().into_iter().flat_map(|a| a.data().to_vec())).collect()
}

fn flat_grads(ws: &[WeightSet]) -> Vec<f64> {
    ws.iter().flat_map(|w| w.arrays().into_iter().flat_map(|a| a.data().to_vec())).collect()
}

fn load(net: &mut Network, params: &[f64]) {
    let mut it = params.iter();
    for w in net.weights_mut() {
        for a in w.arrays_mut() {
            for v in a.data_mut() {
                *v = *it.next().unwrap();
            }
        }
    }
}

#[test]
fn micro_network_gradients_match_central_differences() {
    for temporal in [false, true] {
        for (i, &variant) in ConvVariant::ALL.iter().enumerate() {
            let cfg = micro_network(variant, temporal);
            let mut net = Network::zeros(cfg).unwrap();
            randomize(&mut net, 100 + i as u64);
            let mut r = rng(7 + i as u64);
            let t = if temporal { 4 } else { 2 };
            let clip = random_clip(&mut r, 4, 4, t, 2);
            let labels: Vec<usize> = (0..16 * t).map(|_| r.random_range(0..2)).collect();
            let (_, grads) = net.loss_and_gradients(&clip, &labels).unwrap();

            let analytic = flat_grads(&grads.weights);
            let mut params = flat(&net);
            let mut probe = net.clone();
            let numeric = central_diff(&mut params, 1e-5, |p| {
                load(&mut probe, p);
                probe.loss_and_gradients(&clip, &labels).unwrap().0
            });
            let err = relative_error(&analytic, &numeric);
            assert!(err < 1e-4, "{variant} temporal={temporal}: weight gradient error {err}");

            let mut x = clip.data().to_vec();
            let numeric = central_diff(&mut x, 1e-5, |d| {
                let c = ClipTensor::from_vec(clip.shape(), d.to_vec()).unwrap();
                net.loss_and_gradients(&c, &labels).unwrap().0
            });
            let err = relative_error(grads.input.data(), &numeric);
            assert!(err < 1e-4, "{variant} temporal={temporal}: input gradient error {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn logits_cover_every_input_site(hs in 1usize..4, ws in 1usize..4, v in 0usize..3, seed in 0u64..1000) {
        let (h, w) = (16 * hs, 16 * ws);
        let net = Network::init(NetworkConfig::toy().with_variant(ConvVariant::ALL[v]), seed).unwrap();
        let clip = random_clip(&mut rng(seed), h, w, 8, 3);
        let logits = net.forward(&clip).unwrap();
        prop_assert_eq!(logits.shape(), TensorShape::new(h, w, 8, 2).unwrap());
        prop_assert!(logits.is_finite());
    }
}

#[test]
fn full_width_configuration_keeps_clip_dims() {
    for v in ConvVariant::ALL {
        let plan = NetworkConfig::full_width().with_variant(v).plan([320, 320, 8]).unwrap();
        assert_eq!(plan.output, [320, 320, 8]);
        assert_eq!(*plan.encoder_dims.last().unwrap(), [20, 20, 4]);
    }
}

fn with_pyramid(p: PyramidConfig) -> NetworkConfig {
    let mut cfg = NetworkConfig::toy();
    cfg.pyramid = PyramidConfig { branch_channels: Some(4), fuse_channels: Some(8), ..p };
    cfg
}

#[test]
fn ablation_pyramids_construct_with_expected_branches() {
    let presets = PyramidConfig::ablation_presets();
    let counts: Vec<usize> = presets.iter().map(|(_, p)| p.branch_count()).collect();
    assert_eq!(counts, vec![4, 5, 5, 4]);
    let clip = random_clip(&mut rng(3), 64, 64, 8, 3);
    for (label, p) in presets {
        let net = Network::init(with_pyramid(p.clone()), 1).unwrap();
        let trace = net.forward_traced(&clip).unwrap();
        let (f, concat, out) =
            (trace.encoder_output().shape(), trace.pyramid_concat().shape(), trace.pyramid_output().shape());
        assert_eq!(concat.c, p.branch_count() * 4, "{label}");
        assert_eq!([concat.h, concat.w, concat.t], [f.h, f.w, f.t], "{label}");
        assert_eq!([out.h, out.w, out.t, out.c], [f.h, f.w, f.t, 8], "{label}");
        assert_eq!(trace.logits().shape(), clip.shape().with_channels(2), "{label}");

        let full = NetworkConfig { pyramid: p.clone(), ..NetworkConfig::full_width() };
        let plan = full.plan([320, 320, 8]).unwrap();
        let fuse = plan.layers.iter().find(|l| l.layer.name == "pyramid.fuse").unwrap();
        assert_eq!(fuse.layer.spec.channels_in, p.branch_count() * 128, "{label}");
        assert_eq!(fuse.input, [20, 20, 4], "{label}");
        assert_eq!(fuse.output, [20, 20, 4], "{label}");
    }
}

#[test]
fn frame_feature_branch_is_spatially_constant() {
    let cfg = with_pyramid(PyramidConfig { spatial_rates: vec![1, 2], ..PyramidConfig::default() });
    let net = Network::init(cfg, 5).unwrap();
    let trace = net.forward_traced(&random_clip(&mut rng(5), 64, 64, 8, 3)).unwrap();
    let c = trace.pyramid_concat();
    let s = c.shape();
    let ff = s.c - 4;
    for t in 0..s.t {
        for ch in ff..s.c {
            let v = c.get(0, 0, t, ch);
            for h in 0..s.h {
                for w in 0..s.w {
                    assert_eq!(c.get(h, w, t, ch), v);
                }
            }
        }
    }
    // the dilated branches are not constant on the same input
    let varies = (0..ff).any(|ch| (0..s.h).any(|h| c.get(h, 0, 0, ch) != c.get(0, 0, 0, ch)));
    assert!(varies);
}

#[test]
fn separable_network_equals_standard_network_with_assembled_kernels() {
    let mut sep = Network::zeros(NetworkConfig::toy()).unwrap();
    randomize(&mut sep, 11);
    let mut std_net = Network::zeros(NetworkConfig::toy().with_variant(ConvVariant::Standard)).unwrap();
    for (dst, src) in std_net.weights_mut().iter_mut().zip(sep.weights()) {
        *dst = match src {
            WeightSet::Separable { channelwise, pointwise, bias } => {
                WeightSet::Standard { kernel: assemble_separable(channelwise, pointwise), bias: bias.clone() }
            }
            other => other.clone(),
        };
    }
    let clip = random_clip(&mut rng(12), 32, 32, 8, 3);
    let diff = sep.forward(&clip).unwrap().max_abs_diff(&std_net.forward(&clip).unwrap()).unwrap();
    let scale = sep.forward(&clip).unwrap().data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-10 * scale.max(1.0), "{diff} vs {scale}");
}

#[test]
fn counted_macs_match_cost_model() {
    for v in ConvVariant::ALL {
        let cfg = NetworkConfig::toy().with_variant(v);
        let net = Network::init(cfg.clone(), 0).unwrap();
        let profile = net.profile(&random_clip(&mut rng(1), 64, 64, 8, 3), CountMode::AllTaps).unwrap();
        let report = network_cost(&cfg, [64, 64, 8]).unwrap();
        let counted: Vec<(String, u64)> =
            profile.into_iter().filter(|(_, part, _)| *part != Part::Encoder).map(|(n, _, m)| (n, m)).collect();
        let predicted: Vec<(String, u64)> = report.per_layer.iter().map(|l| (l.name.clone(), l.macs)).collect();
        assert_eq!(counted, predicted, "{v}");
        assert_eq!(counted.iter().map(|c| c.1).sum::<u64>(), report.macs);
    }
}

#[test]
fn variant_selects_layer_kinds() {
    for v in ConvVariant::ALL {
        let layers = NetworkConfig::toy().with_variant(v).layers().unwrap();
        for l in &layers {
            let expected = if l.name.starts_with("encoder") {
                ConvKind::Standard
            } else if l.name.starts_with("pyramid.rate") || l.name == "pyramid.unit" || l.name.ends_with(".conv") {
                v.kind()
            } else {
                ConvKind::Pointwise
            };
            assert_eq!(l.kind, expected, "{}", l.name);
        }
    }
}

fn dataset(size: usize, clips: usize, seed: u64) -> Vec<Sample> {
    let spec = SynthSpec {
        clips,
        height: size,
        width: size,
        rectangle: [size * 3 / 8, size * 9 / 32],
        radius: size * 11 / 64,
        seed,
        ..SynthSpec::default()
    };
    generate(&spec).unwrap().into_iter().map(|c| Sample::from_mask(c.clip, &c.mask).unwrap()).collect()
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let data = dataset(32, 2, 9);
    let cfg = TrainConfig { scale_jitter: [0.5, 2.0], ..TrainConfig::default() };
    let run = || {
        let mut t = Trainer::new(Network::init(NetworkConfig::toy(), 4).unwrap(), cfg.clone(), 4).unwrap();
        let losses: Vec<u64> = (0..3).map(|_| t.train_epoch(&data).unwrap().loss.to_bits()).collect();
        (losses, t.into_network())
    };
    let (la, a) = run();
    let (lb, b) = run();
    assert_eq!(la, lb);
    let bits = |n: &Network| flat(n).into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&Network::init(NetworkConfig::toy(), 4).unwrap()));
}

#[test]
fn training_lowers_the_loss() {
    let data = dataset(64, 4, 0);
    let mut t = Trainer::new(Network::init(NetworkConfig::toy(), 0).unwrap(), TrainConfig::toy(), 0).unwrap();
    let first = t.train_epoch(&data).unwrap();
    let mut last = first;
    while t.epoch() <= 50 {
        last = t.train_epoch(&data).unwrap();
    }
    assert_eq!(last.epoch, 50);
    assert!((last.learning_rate - 1e-4 * 0.95f64.powi(50)).abs() < 1e-18);
    assert!(last.loss < first.loss, "{} !< {}", last.loss, first.loss);
}

#[test]
fn empty_dataset_rejected() {
    let mut t = Trainer::new(Network::init(NetworkConfig::toy(), 0).unwrap(), TrainConfig::toy(), 0).unwrap();
    assert!(t.train_epoch(&[]).is_err());
}
