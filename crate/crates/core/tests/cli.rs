use std::path::Path;
use std::process::Command;

use num_rational::Ratio;
use sepconv3d::cli::run;
use sepconv3d::cost::separable_reduction_ratio;
use sepconv3d::format::read_clip;
use sepconv3d::network::{ConvVariant, ExperimentConfig, Network, NetworkConfig};
use sepconv3d::postproc::mask_iou;

fn cli(args: &[&str]) -> anyhow::Result<String> {
    let mut out = Vec::new();
    run(std::iter::once("sepconv3d").chain(args.iter().copied()), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace().find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn bundled_config() -> String {
    format!("{}/configs/toy.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn bundled_config_is_the_toy_setup() {
    let text = std::fs::read_to_string(bundled_config()).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::toy());
}

#[test]
fn synth_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (p, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        cli(&["synth", "--out", path_str(p), "--seed", seed, "--clips", "2"]).unwrap();
    }
    let bytes = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["clip_000.vclp", "mask_000.vclp", "clip_001.vclp", "mask_001.vclp"] {
        assert_eq!(bytes(&a, f), bytes(&b, f), "{f}");
    }
    assert_ne!(bytes(&a, "clip_000.vclp"), bytes(&c, "clip_000.vclp"));
    assert!(!a.join("clip_002.vclp").exists());
}

#[test]
fn synth_rectangles_have_exact_area() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "kind = \"rectangle\"\nrectangle = [10, 6]\nmax_speed = 0.0\nclips = 3\n").unwrap();
    let out = dir.path().join("data");
    cli(&["synth", "--config", path_str(&cfg), "--out", path_str(&out), "--seed", "1"]).unwrap();
    for i in 0..3 {
        let mask = read_clip(out.join(format!("mask_{i:03}.vclp"))).unwrap();
        let s = mask.shape();
        let frame = |t: usize| (0..s.h * s.w).map(|p| mask.get(p / s.w, p % s.w, t, 0) > 0.5).collect::<Vec<_>>();
        for t in 0..s.t {
            assert_eq!(frame(t).iter().filter(|&&v| v).count(), 60);
            assert_eq!(frame(t), frame(0));
        }
    }
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ck = dir.path().join("ck.vclp");
    cli(&["synth", "--out", path_str(&data), "--clips", "1"]).unwrap();
    let log =
        cli(&["train", "--data", path_str(&data), "--out", path_str(&ck), "--epochs", "0", "--seed", "9"]).unwrap();
    assert!(!log.contains("epoch="));
    assert_eq!(Network::load(&ck).unwrap(), Network::init(NetworkConfig::toy(), 9).unwrap());

    cli(&["train", "--data", path_str(&data), "--out", path_str(&ck), "--epochs", "0", "--variant", "r2plus1d"])
        .unwrap();
    assert_eq!(Network::load(&ck).unwrap().config().conv_variant, ConvVariant::R2plus1d);
}

#[test]
fn untrained_model_predicts_one_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ck = dir.path().join("zero.vclp");
    let mask = dir.path().join("pred.vclp");
    cli(&["synth", "--out", path_str(&data), "--clips", "1", "--height", "32", "--width", "48"]).unwrap();
    Network::zeros(NetworkConfig::toy()).unwrap().save(&ck).unwrap();
    let clip = data.join("clip_000.vclp");
    let log = cli(&[
        "segment",
        "--checkpoint",
        path_str(&ck),
        "--input",
        path_str(&clip),
        "--out",
        path_str(&mask),
        "--boxes",
    ])
    .unwrap();
    let pred = read_clip(&mask).unwrap();
    assert_eq!(pred.shape(), read_clip(&clip).unwrap().shape().with_channels(1));
    assert!(pred.data().iter().all(|&v| v == pred.data()[0]));
    assert_eq!(log.lines().filter(|l| l.ends_with("empty")).count(), 8);
}

#[test]
fn train_then_segment_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ck = dir.path().join("toy.vclp");
    cli(&["synth", "--out", path_str(&data)]).unwrap();
    let log =
        cli(&["train", "--config", &bundled_config(), "--data", path_str(&data), "--out", path_str(&ck)]).unwrap();
    let losses: Vec<f64> = log.lines().filter_map(|l| field(l, "loss")).map(|v| v.parse().unwrap()).collect();
    assert_eq!(losses.len(), 200);
    assert!(losses[199] < losses[0]);
    let lrs: Vec<f64> = log.lines().filter_map(|l| field(l, "lr")).map(|v| v.parse().unwrap()).collect();
    assert!((lrs[10] - 5.987369392383789e-5).abs() < 1e-10);

    for i in 0..4 {
        let out = dir.path().join(format!("pred_{i}.vclp"));
        let clip = data.join(format!("clip_{i:03}.vclp"));
        cli(&["segment", "--checkpoint", path_str(&ck), "--input", path_str(&clip), "--out", path_str(&out)]).unwrap();
        let pred: Vec<bool> = read_clip(&out).unwrap().data().iter().map(|&v| v == 1.0).collect();
        let gt: Vec<bool> =
            read_clip(data.join(format!("mask_{i:03}.vclp"))).unwrap().data().iter().map(|&v| v > 0.5).collect();
        let iou = mask_iou(&pred, &gt).unwrap();
        assert!(iou > 0.9, "clip {i}: IoU {iou}");
    }
}

#[test]
fn cost_report_rows() {
    let log = cli(&["cost-report", "--layers"]).unwrap();
    let totals: Vec<&str> = log.lines().filter(|l| l.starts_with("total variant=")).collect();
    assert_eq!(totals.len(), 3);
    let ratio = |v: &str| -> f64 {
        let line = totals.iter().find(|l| field(l, "variant") == Some(v)).unwrap();
        field(line, "ratio").unwrap().parse().unwrap()
    };
    assert_eq!(ratio("standard"), 1.0);
    assert!((0.03..=0.06).contains(&ratio("separable")));
    assert!((ratio("r2plus1d") - 1.0).abs() < 0.02);

    let layers = NetworkConfig::full_width().layers().unwrap();
    let macs = |variant: &str, name: &str| -> u64 {
        log.lines()
            .filter(|l| {
                l.starts_with("layer ") && field(l, "variant") == Some(variant) && field(l, "name") == Some(name)
            })
            .map(|l| field(l, "macs").unwrap().parse().unwrap())
            .next()
            .unwrap()
    };
    let mut checked = 0;
    for l in layers.iter().filter(|l| l.kind == sepconv3d::kernels::ConvKind::Separable) {
        let r = Ratio::new(macs("separable", &l.name), macs("standard", &l.name));
        assert_eq!(r, separable_reduction_ratio(&l.spec), "{}", l.name);
        checked += 1;
    }
    assert!(checked >= 5);

    let only = cli(&["cost-report", "--variant", "separable", "--input", "64x64x8"]).unwrap();
    assert_eq!(only.lines().filter(|l| l.starts_with("total variant=")).count(), 1);
}

#[test]
fn bench_lines() {
    let one = cli(&["bench", "--kernel", "channelwise", "--dims", "6x6x4x3", "--dilation", "2", "--repetitions", "1"])
        .unwrap();
    assert_eq!(one.lines().filter(|l| l.starts_with("rep=")).count(), 1);
    let summary = one.lines().find(|l| l.starts_with("summary")).unwrap();
    assert_eq!(field(summary, "measured_macs"), field(summary, "predicted_macs"));

    let measured = |kernel: &str| -> u64 {
        let log = cli(&["bench", "--kernel", kernel, "--dims", "2x2x2x512", "--repetitions", "1"]).unwrap();
        let s = log.lines().find(|l| l.starts_with("summary")).unwrap();
        assert_eq!(field(s, "measured_macs"), field(s, "predicted_macs"));
        field(s, "measured_macs").unwrap().parse().unwrap()
    };
    assert!(measured("separable") < measured("standard"));
    assert_eq!(measured("standard"), 8 * 27 * 512 * 512);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let bin = env!("CARGO_BIN_EXE_sepconv3d");
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let cases: Vec<Vec<String>> = vec![
        vec!["train".into(), "--data".into(), path_str(&missing).into(), "--out".into(), "x.vclp".into()],
        vec![
            "segment".into(),
            "--checkpoint".into(),
            "nope.vclp".into(),
            "--input".into(),
            "a".into(),
            "--out".into(),
            "b".into(),
        ],
        vec!["bench".into(), "--dims".into(), "4x4".into()],
        vec!["cost-report".into(), "--variant".into(), "octagonal".into()],
        vec!["fly".into()],
    ];
    for args in cases {
        let out = Command::new(bin).args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }
    let ok = Command::new(bin).args(["cost-report", "--input", "64x64x8"]).output().unwrap();
    assert!(ok.status.success());
}
