mod support;

use num_rational::Ratio;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use sepconv3d::cost::{
    cost_channelwise, cost_pointwise, cost_r2plus1d, cost_separable, cost_standard, layer_parameters, network_cost,
    r2plus1d_reduction_ratio, separable_reduction_ratio, CostReport,
};
use sepconv3d::kernels::{conv_forward, m_prime, measured_macs, ConvKind, ConvSpec, CountMode, Padding, WeightSet};
use sepconv3d::network::{ConvVariant, NetworkConfig};
use support::{random_clip, rng};

fn predicted(kind: ConvKind, input: [usize; 3], spec: &ConvSpec) -> u64 {
    match kind {
        ConvKind::Standard => cost_standard(input, spec),
        ConvKind::Channelwise => cost_channelwise(input, spec),
        ConvKind::Pointwise => cost_pointwise(input, spec),
        ConvKind::Separable => cost_separable(input, spec),
        ConvKind::R2plus1d => cost_r2plus1d(input, spec, m_prime(spec)),
    }
    .unwrap()
}

const KINDS: [ConvKind; 5] =
    [ConvKind::Standard, ConvKind::Channelwise, ConvKind::Pointwise, ConvKind::Separable, ConvKind::R2plus1d];

fn spec_strategy() -> impl Strategy<Value = (usize, ConvSpec, [usize; 3])> {
    (
        0usize..5,
        prop::array::uniform3(1usize..4),
        1usize..5,
        1usize..5,
        1usize..3,
        1usize..3,
        prop::array::uniform3(1usize..3),
        any::<bool>(),
    )
        .prop_map(|(k, kernel, m, n, gs, gt, stride, valid)| {
            let kind = KINDS[k];
            let kernel = if kind == ConvKind::Pointwise { [1, 1, 1] } else { kernel };
            let n = if kind == ConvKind::Channelwise { m } else { n };
            let stride = if kind == ConvKind::Pointwise { [1, 1, 1] } else { stride };
            let spec = ConvSpec {
                kernel,
                channels_in: m,
                channels_out: n,
                spatial_dilation: gs,
                temporal_dilation: gt,
                stride,
                padding: if valid { Padding::Valid } else { Padding::Same },
            };
            let input = [0, 1, 2].map(|a| {
                let dil = if a == 2 { gt } else { gs };
                (kernel[a] - 1) * dil + 1 + a
            });
            (k, spec, input)
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 96, ..ProptestConfig::default() })]

    #[test]
    fn counter_matches_closed_form((k, spec, input) in spec_strategy(), seed in 0u64..1000) {
        let kind = KINDS[k];
        let x = random_clip(&mut rng(seed), input[0], input[1], input[2], spec.channels_in);
        let w = WeightSet::zeros(kind, &spec, m_prime(&spec), false);
        let (_, all) = measured_macs(CountMode::AllTaps, |c| conv_forward(&x, &w, &spec, Some(c)).unwrap());
        prop_assert_eq!(all, predicted(kind, input, &spec));
        if spec.padding == Padding::Valid {
            let (_, executed) = measured_macs(CountMode::Executed, |c| conv_forward(&x, &w, &spec, Some(c)).unwrap());
            prop_assert_eq!(executed, all);
        }
    }

    #[test]
    fn separable_over_standard_is_exact_ratio(
        kernel in prop::array::uniform3(1usize..6),
        m in 1usize..64,
        n in 1usize..600,
        input in prop::array::uniform3(1usize..40),
        stride in prop::array::uniform3(1usize..3),
    ) {
        let spec = ConvSpec::new(kernel, m, n).with_stride(stride);
        let sep = cost_separable(input, &spec).unwrap();
        let std = cost_standard(input, &spec).unwrap();
        prop_assert_eq!(Ratio::new(sep, std), separable_reduction_ratio(&spec));
        let params = Ratio::new(
            layer_parameters(ConvKind::Separable, &spec, 0, false),
            layer_parameters(ConvKind::Standard, &spec, 0, false),
        );
        prop_assert_eq!(params, separable_reduction_ratio(&spec));
    }

    #[test]
    fn r2plus1d_parameters_track_standard(kernel in prop::array::uniform3(1usize..6), m in 1usize..300, n in 1usize..300) {
        let spec = ConvSpec::new(kernel, m, n);
        let mp = m_prime(&spec);
        let r2 = layer_parameters(ConvKind::R2plus1d, &spec, mp, false) as f64;
        let std = layer_parameters(ConvKind::Standard, &spec, mp, false) as f64;
        // relative slack from rounding M′ is at most 1/(2M′), plus the clamp at M′ = 1
        let exact = (m * n * spec.kernel_volume()) as f64 / (n * kernel[2] + m * kernel[0] * kernel[1]) as f64;
        if exact >= 1.0 {
            prop_assert!((r2 - std).abs() / std <= 1.0 / mp as f64, "{} vs {}", r2, std);
        }
        let ratio = r2plus1d_reduction_ratio(&spec, mp);
        prop_assert_eq!(ratio, Ratio::new(r2 as u64, std as u64));
        let input = [7, 5, 6];
        prop_assert_eq!(
            Ratio::new(cost_r2plus1d(input, &spec, mp).unwrap(), cost_standard(input, &spec).unwrap()),
            ratio
        );
    }

    #[test]
    fn costs_grow_with_every_size(
        kernel in prop::array::uniform3(1usize..5),
        m in 1usize..20,
        n in 1usize..20,
        input in prop::array::uniform3(1usize..20),
        axis in 0usize..3,
    ) {
        let spec = ConvSpec::new(kernel, m, n);
        let mut bigger = input;
        bigger[axis] += 1;
        for kind in KINDS {
            let s = if kind == ConvKind::Channelwise { ConvSpec::new(kernel, m, m) } else { spec };
            let base = predicted(kind, input, &s);
            prop_assert!(predicted(kind, bigger, &s) > base);
            let wider = ConvSpec { channels_in: s.channels_in + 1, channels_out: s.channels_out + if kind == ConvKind::Channelwise { 1 } else { 0 }, ..s };
            prop_assert!(predicted(kind, input, &wider) >= base);
        }
        prop_assert!(separable_reduction_ratio(&ConvSpec::new(kernel, m, n + 1)) < separable_reduction_ratio(&spec));
    }

    #[test]
    fn totals_ignore_layer_order(seed in 0u64..1000, v in 0usize..3) {
        let report = network_cost(&NetworkConfig::full_width().with_variant(ConvVariant::ALL[v]), [320, 320, 8]).unwrap();
        let mut layers = report.per_layer.clone();
        layers.shuffle(&mut rng(seed));
        let shuffled = CostReport::from_layers(layers);
        prop_assert_eq!(
            (shuffled.macs, shuffled.ops, shuffled.parameters, shuffled.activation_bytes),
            (report.macs, report.ops, report.parameters, report.activation_bytes)
        );
    }
}

#[test]
fn reduction_ratio_for_512_channels() {
    let r = separable_reduction_ratio(&ConvSpec::cube(3, 512, 512));
    assert_eq!(r, Ratio::new(1, 512) + Ratio::new(1, 27));
    assert_eq!(r, Ratio::new(539, 13824));
    assert!(r >= Ratio::new(1, 26) && r <= Ratio::new(1, 25));
    assert!((*r.numer() as f64 / *r.denom() as f64 - 0.038_990_162).abs() < 1e-9);
}

#[test]
fn r2plus1d_parity_at_equal_widths() {
    for c in [64usize, 128, 256, 512] {
        let spec = ConvSpec::cube(3, c, c);
        let mp = m_prime(&spec);
        assert_eq!(mp * 12, c * 27);
        assert_eq!(r2plus1d_reduction_ratio(&spec, mp), Ratio::from_integer(1));
    }
}

#[test]
fn full_width_totals_are_near_reported_counts() {
    let cost = |v| network_cost(&NetworkConfig::full_width().with_variant(v), [320, 320, 8]).unwrap();
    let (std, r2, sep) = (cost(ConvVariant::Standard), cost(ConvVariant::R2plus1d), cost(ConvVariant::Separable));
    let ratio = sep.ops as f64 / std.ops as f64;
    assert!((0.03..=0.06).contains(&ratio), "{ratio}");
    assert!((r2.ops as f64 / std.ops as f64 - 1.0).abs() <= 0.02);
    assert_eq!(std.ops, 2 * std.macs);
    assert!(sep.parameters < std.parameters / 10);
}
