//! End-to-end runs of the `fogsight` binary.

use fogsight::dataio::LabelMap;
use fogsight::imaging::{encode_raw_png, read_raw_png, save_png, ColorSpace, PlanarImage, PngDepth, RawPng};
use std::path::Path;
use std::process::{Command, Output};

fn fogsight(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fogsight"))
        .args(args)
        .env_remove("FOGSIGHT_SEED")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn unit_samples(path: &Path) -> Vec<f64> {
    let raw = read_raw_png(path).unwrap();
    let max = match raw.depth {
        PngDepth::Eight => 255.0,
        PngDepth::Sixteen => 65535.0,
    };
    raw.samples.iter().map(|&s| s as f64 / max).collect()
}

fn write_meters16(path: &Path, w: usize, h: usize, meters: impl Fn(usize) -> f64) {
    let raw = RawPng {
        width: w,
        height: h,
        channels: 1,
        depth: PngDepth::Sixteen,
        samples: (0..w * h).map(|i| (meters(i) * 256.0).round() as u16).collect(),
    };
    std::fs::write(path, encode_raw_png(&raw).unwrap()).unwrap();
}

fn gradient_image(w: usize, h: usize) -> PlanarImage {
    PlanarImage::from_fn_rgb(w, h, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.3])
}

#[test]
fn transform_maps_gray_to_half_and_red_to_its_luma_weight() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    std::fs::create_dir(&input).unwrap();
    let gray = PlanarImage::new(5, 4, ColorSpace::Gray, vec![vec![0.4; 20]]).unwrap();
    save_png(&input.join("gray.png"), &gray, PngDepth::Eight).unwrap();
    save_png(&input.join("red.png"), &PlanarImage::filled_rgb(5, 4, [1.0, 0.0, 0.0]), PngDepth::Eight).unwrap();

    let o = fogsight(&["transform", "--in", p(&input), "--out", p(&out), "--transform", "iit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(unit_samples(&out.join("gray.png")).iter().all(|v| (v - 0.5).abs() <= 0.5 / 65535.0));

    let o = fogsight(&["transform", "--in", p(&input), "--out", p(&out), "--transform", "luminance"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(unit_samples(&out.join("red.png")).iter().all(|v| (v - 0.299).abs() <= 0.5 / 65535.0));

    let o = fogsight(&["transform", "--in", p(&input), "--out", p(&out), "--transform", "iab"]);
    assert!(o.status.success());
    assert_eq!(read_raw_png(&out.join("red.png")).unwrap().channels, 3);
}

#[test]
fn transform_lists_every_bad_file_and_still_writes_the_good_ones() {
    let dir = tempfile::tempdir().unwrap();
    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    std::fs::create_dir(&input).unwrap();
    std::fs::write(input.join("a_broken.png"), b"not a png").unwrap();
    std::fs::write(input.join("b_broken.png"), b"\x89PNG truncated").unwrap();
    save_png(&input.join("c_good.png"), &gradient_image(6, 6), PngDepth::Eight).unwrap();

    let o = fogsight(&["transform", "--in", p(&input), "--out", p(&out), "--transform", "ihs"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("a_broken.png") && err.contains("b_broken.png"), "{err}");
    assert!(out.join("c_good.png").is_file());
}

#[test]
fn transform_of_an_empty_directory_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = fogsight(&["transform", "--in", p(dir.path()), "--out", p(&out), "--transform", "iit"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning"));
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

fn fog_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (input, depth) = (dir.join("in"), dir.join("depth"));
    std::fs::create_dir_all(&input).unwrap();
    std::fs::create_dir_all(&depth).unwrap();
    save_png(&input.join("scene.png"), &gradient_image(8, 6), PngDepth::Eight).unwrap();
    write_meters16(&depth.join("scene.png"), 8, 6, |i| 5.0 + 10.0 * i as f64);
    (input, depth)
}

#[test]
fn zero_beta_fog_is_bitwise_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (input, depth) = fog_fixture(dir.path());
    let out = dir.path().join("out");
    let o = fogsight(&[
        "fog", "--in", p(&input), "--depth", p(&depth), "--out", p(&out), "--beta", "0", "--depth-decode", "meters16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = read_raw_png(&input.join("scene.png")).unwrap();
    let b = read_raw_png(&out.join("beta_0").join("scene.png")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn paper_betas_fill_three_directories_and_denser_fog_is_closer_to_the_light() {
    let dir = tempfile::tempdir().unwrap();
    let (input, depth) = fog_fixture(dir.path());
    let out = dir.path().join("out");
    let o = fogsight(&[
        "fog", "--in", p(&input), "--depth", p(&depth), "--out", p(&out), "--paper-betas", "--depth-decode", "meters16",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut dirs: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    assert_eq!(dirs, ["beta_0.005", "beta_0.01", "beta_0.02"]);
    let meta = std::fs::read_to_string(out.join("beta_0.01/fog_params.txt")).unwrap();
    assert!(meta.contains("beta 0.01") && meta.contains("atmospheric_light 0.8"), "{meta}");

    let light = 0.8;
    let light_gap = |b: &str| -> Vec<f64> {
        unit_samples(&out.join(format!("beta_{b}/scene.png")))
            .iter()
            .map(|v| (v - light).abs())
            .collect()
    };
    let (thin, thick) = (light_gap("0.005"), light_gap("0.02"));
    // one 8-bit quantum of slack for rounding
    assert!(thin.iter().zip(&thick).all(|(t, k)| *k <= t + 1.0 / 255.0));
    assert!(thick.iter().sum::<f64>() < thin.iter().sum::<f64>());
}

#[test]
fn fog_names_the_stem_without_depth() {
    let dir = tempfile::tempdir().unwrap();
    let (input, depth) = fog_fixture(dir.path());
    save_png(&input.join("orphan.png"), &gradient_image(8, 6), PngDepth::Eight).unwrap();
    let out = dir.path().join("out");
    let o = fogsight(&[
        "fog", "--in", p(&input), "--depth", p(&depth), "--out", p(&out), "--beta", "0.01", "--depth-decode", "meters16",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("orphan"), "{}", stderr(&o));
    assert!(out.join("beta_0.01/scene.png").is_file());
}

const TINY: [&str; 10] = [
    "--set", "data.synthetic=4",
    "--set", "data.height=16",
    "--set", "data.width=32",
    "--set", "train.batch=2",
    "--set", "train.checkpoint_every=3",
];

fn train(run: &Path, steps: u64, extra: &[&str], resume: Option<&Path>) -> Output {
    let steps = format!("train.steps={steps}");
    let dir = format!("run.dir={}", p(run));
    let mut args = vec!["train", "--set", &steps, "--set", &dir];
    args.extend(TINY);
    args.extend(extra);
    if let Some(r) = resume {
        args.extend(["--resume", p(r)]);
    }
    fogsight(&args)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn resumed_training_continues_the_uninterrupted_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (whole, split) = (dir.path().join("whole"), dir.path().join("split"));
    assert!(train(&whole, 6, &[], None).status.success());
    assert!(train(&split, 3, &[], None).status.success());
    let o = train(&split, 6, &[], Some(&split.join("last.fogw")));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("resuming at step 4"));

    let rows = |d: &Path| -> Vec<Vec<f64>> {
        read(&d.join("trace.csv"))
            .lines()
            .skip(1)
            .map(|l| l.split(',').filter(|c| !c.is_empty()).map(|c| c.parse().unwrap()).collect())
            .collect()
    };
    let (a, b) = (rows(&whole), rows(&split));
    assert_eq!(a.len(), 6);
    assert_eq!(b.iter().map(|r| r[0]).collect::<Vec<_>>(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x[1] - y[1]).abs() <= 1e-6, "{x:?} vs {y:?}");
    }
    for f in ["config.txt", "norm.txt", "trace.png", "ckpt_000003.fogw", "ckpt_000006.fogw"] {
        assert!(whole.join(f).is_file(), "{f}");
    }
    assert!(read(&whole.join("config.txt")).contains("train.lr = 0.005"));
}

#[test]
fn joint_trace_records_both_losses_and_their_weighted_sum() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("joint");
    let o = train(
        &run,
        3,
        &["--set", "train.joint=true", "--set", "data.normalize=false", "--set", "data.fog_beta=0.02"],
        None,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = read(&run.join("trace.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(fogsight::cli::TRACE_HEADER));
    for l in lines {
        let c: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        let (seg, adv, total) = (c[1], c[2], c[3]);
        assert!((total - (adv + 0.1 * seg)).abs() <= 1e-6 * total.abs().max(1.0), "{l}");
    }
    let ckpt = fogsight::tensor::checkpoint::load(&run.join("last.fogw")).unwrap();
    assert!(ckpt.iter().any(|(k, _)| k.starts_with("gen.")));
    assert!(ckpt.iter().any(|(k, _)| k.starts_with("net.")));
}

#[test]
fn joint_mode_rejects_normalised_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(&dir.path().join("r"), 1, &["--set", "train.joint=true"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("normalize"));
}

#[test]
fn unknown_keys_are_rejected_and_the_seed_variable_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "seed = 3\nmodel.growht = 8\n").unwrap();
    let o = fogsight(&["stats", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.growht") && stderr(&o).contains("line 2"), "{}", stderr(&o));

    let run = dir.path().join("r");
    let dirset = format!("run.dir={}", p(&run));
    let mut args = vec!["train", "--set", "train.steps=1", "--set", &dirset];
    args.extend(TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_fogsight"))
        .args(&args)
        .env("FOGSIGHT_SEED", "17")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read(&run.join("config.txt")).lines().any(|l| l == "seed = 17"));
}

#[test]
fn sum_reduction_scales_the_first_loss_by_the_scored_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let first_loss = |reduction: &str| {
        let run = dir.path().join(reduction);
        let dirset = format!("run.dir={}", p(&run));
        let red = format!("loss.reduction={reduction}");
        let mut args = vec!["train", "--set", "train.steps=1", "--set", &dirset, "--set", &red];
        args.extend(TINY);
        let o = fogsight(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(read(&run.join("config.txt")).lines().any(|l| l == format!("loss.reduction = {reduction}")));
        let trace = read(&run.join("trace.csv"));
        trace.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse::<f64>().unwrap()
    };
    let (mean, sum) = (first_loss("mean"), first_loss("sum"));
    assert!(sum > 100.0 * mean, "mean {mean}, sum {sum}");
}

/// Flat layout with one 2x2 labelled image.
fn two_class_set(root: &Path, ids: [u8; 4]) {
    for d in ["img", "label", "depth"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
    save_png(&root.join("img/a.png"), &gradient_image(2, 2), PngDepth::Eight).unwrap();
    let label = LabelMap::new(2, 2, ids.to_vec()).unwrap();
    std::fs::write(root.join("label/a.png"), encode_raw_png(&label.to_raw_png()).unwrap()).unwrap();
}

fn metric_csv(dir: &Path) -> Vec<(String, f64)> {
    read(&dir.join("metrics.csv"))
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("summary") && !l.contains("scored_pixels"))
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].to_string(), c[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn eval_scores_oracle_and_constant_predictors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gt = [0u8, 0, 1, 1];
    two_class_set(&data, gt);
    let root = format!("data.root={}", p(&data));
    let base = ["eval", "--set", &root, "--set", "data.layout=flat", "--split", "train"];

    let rep = dir.path().join("oracle");
    let mut args = base.to_vec();
    args.extend(["--predictor", "oracle", "--report-dir", p(&rep)]);
    let o = fogsight(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(metric_csv(&rep).iter().all(|(_, v)| *v == 1.0), "{:?}", metric_csv(&rep));

    // independent count: prediction is class 1 everywhere
    let k = 1u8;
    let correct = gt.iter().filter(|&&g| g == k).count() as f64;
    let global = correct / 4.0;
    let recall_0 = 0.0;
    let recall_1 = 1.0;
    let iou_0 = 0.0;
    let iou_1 = correct / 4.0;
    let rep = dir.path().join("constant");
    let preds = dir.path().join("pred");
    let mut args = base.to_vec();
    args.extend(["--predictor", "constant:1", "--report-dir", p(&rep), "--pred-out", p(&preds)]);
    let o = fogsight(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = metric_csv(&rep);
    let get = |name: &str| m.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("{name} in {m:?}")).1;
    assert_eq!(get("global_acc"), global);
    assert_eq!(get("class_avg_acc"), (recall_0 + recall_1) / 2.0);
    assert_eq!(get("mean_iou"), (iou_0 + iou_1) / 2.0);
    assert!(preds.join("a.png").is_file());

    let mut args = base.to_vec();
    args.extend(["--predictor", "constant:1", "--report-dir", p(&rep), "--min-miou", "0.9"]);
    assert_eq!(fogsight(&args).status.code(), Some(2));
}

#[test]
fn eval_of_a_trained_net_and_a_mismatched_spec() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert!(train(&run, 2, &["--set", "data.synthetic_val=2"], None).status.success());
    let rundir = format!("run.dir={}", p(&run));
    let ckpt = run.join("last.fogw");
    let mut args = vec!["eval", "--set", &rundir, "--set", "data.synthetic_val=2", "--ckpt", p(&ckpt)];
    args.extend(TINY);
    let o = fogsight(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean IoU"));
    assert!(run.join("eval/metrics.txt").is_file());

    args.extend(["--set", "model.growth=8"]);
    let o = fogsight(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`dl."), "{}", stderr(&o));
}

#[test]
fn stats_prints_one_row_per_class() {
    let o = fogsight(&["stats", "--set", "data.synthetic=2", "--set", "data.height=16", "--set", "data.width=16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("road") && out.contains("bicycle"));
    assert_eq!(out.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 19);
}

#[test]
fn gradcheck_scopes_and_negative_control() {
    let o = fogsight(&["gradcheck", "--scope", "conv2d"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.contains("conv2d") && out.contains("pass"));

    let o = fogsight(&["gradcheck", "--scope", "softmax", "--inject-fault", "softmax"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));

    assert_eq!(fogsight(&["gradcheck", "--scope", "gelu"]).status.code(), Some(2));
}

#[test]
fn gan_train_then_translate() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("gan");
    let rundir = format!("run.dir={}", p(&run));
    let o = fogsight(&["gan-train", "--set", &rundir, "--set", "gan.steps=20", "--veil", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mae_after"));
    let trace = read(&run.join("gan_trace.csv"));
    assert_eq!(trace.lines().count(), 21);
    assert!(run.join("gan_trace.png").is_file());

    let (input, out) = (dir.path().join("in"), dir.path().join("out"));
    std::fs::create_dir(&input).unwrap();
    save_png(&input.join("x.png"), &gradient_image(12, 8), PngDepth::Eight).unwrap();
    let o = fogsight(&["translate", "--in", p(&input), "--out", p(&out), "--ckpt", p(&run.join("generator.fogw"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let raw = read_raw_png(&out.join("x.png")).unwrap();
    assert_eq!((raw.width, raw.height, raw.channels), (12, 8, 3));
}
