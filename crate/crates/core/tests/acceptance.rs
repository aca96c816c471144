//! Acceptance criteria, one line each. Runs as a plain binary so every
//! verdict is printed whether or not it passes; exits non-zero on any
//! failure.

use fogsight::dataio::synthetic::shapes_dataset;
use fogsight::dataio::{make_batch, AuxMode, BatchOptions, ClassStats, InputMode, LabelMap, IGNORE};
use fogsight::diagnostics::{run_gradcheck_suite, GRADCHECK_TOL, PRIMITIVES};
use fogsight::gan::{
    adv_loss, joint_gradient_check, mean_abs_error, train_toy_gan, translate, veil_corpus, GanConfig, GenLossForm,
    ToyGanSpec,
};
use fogsight::imaging::{illumination_invariant, luminance, simulate_fog, DepthMap, FogParams, LuminanceWeights, PlanarImage};
use fogsight::metrics::{report, AbsentClasses, ConfusionMatrix};
use fogsight::segnet::{build_network, class_weights, forward, NetworkSpec};
use fogsight::tensor::{seeded_rng, AdamConfig, Conv2dParams, NormMode, Rng};
use fogsight::train::SegTrainer;
use fogsight::{Tape, Tensor};
use rand::Rng as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_oracle() -> Verdict {
    let t = Instant::now();
    let rows = run_gradcheck_suite(None, 0, None).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    check(
        failed.is_empty() && rows.len() == PRIMITIVES.len() && elapsed < Duration::from_secs(60),
        format!(
            "{} primitives, worst rel err {worst:.2e} (< {GRADCHECK_TOL:e}), {:.1}s, failed {failed:?}",
            rows.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn loop_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], p: &Conv2dParams) -> Vec<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [f, _, kh, kw] = w.dims4().unwrap();
    let oh = (h + 2 * p.padding.0 - p.dilation.0 * (kh - 1) - 1) / p.stride.0 + 1;
    let ow = (wd + 2 * p.padding.1 - p.dilation.1 * (kw - 1) - 1) / p.stride.1 + 1;
    let mut out = Vec::with_capacity(n * f * oh * ow);
    for ni in 0..n {
        for fi in 0..f {
            for r in 0..oh {
                for q in 0..ow {
                    let mut acc = b[fi];
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (r * p.stride.0 + ki * p.dilation.0) as isize - p.padding.0 as isize;
                                let iw = (q * p.stride.1 + kj * p.dilation.1) as isize - p.padding.1 as isize;
                                if ih < 0 || iw < 0 || ih as usize >= h || iw as usize >= wd {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + ih as usize) * wd + iw as usize];
                                acc += w.data()[((fi * c + ci) * kh + ki) * kw + kj] * xv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn conv_equivalence() -> Verdict {
    let mut rng = seeded_rng(50);
    let rand = |shape: &[usize], rng: &mut Rng| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let (mut cases, mut mismatches) = (0, 0);
    while cases < 64 {
        let (n, c, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (f, kh, kw) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
        let p = Conv2dParams {
            stride: (rng.gen_range(1..=2), rng.gen_range(1..=2)),
            padding: (rng.gen_range(0..=2), rng.gen_range(0..=2)),
            dilation: (rng.gen_range(1..=2), rng.gen_range(1..=2)),
        };
        if h + 2 * p.padding.0 < p.dilation.0 * (kh - 1) + 1 || w + 2 * p.padding.1 < p.dilation.1 * (kw - 1) + 1 {
            continue;
        }
        let (x, wt, b) = (rand(&[n, c, h, w], &mut rng), rand(&[f, c, kh, kw], &mut rng), rand(&[f], &mut rng));
        let mut t = Tape::<f64>::new();
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(wt.clone()), t.constant(b.clone()));
        let y = t.conv2d(xv, wv, Some(bv), &p).unwrap();
        if t.value(y).data() != loop_conv(&x, &wt, b.data(), &p).as_slice() {
            mismatches += 1;
        }
        cases += 1;
    }
    check(mismatches == 0, format!("{cases} random cases up to 2x4x8x8, {mismatches} inexact"))
}

fn invariance() -> Verdict {
    let mut rng = seeded_rng(5);
    // channels in [0.05, 0.2] stay inside (floor, 1] for every k
    let img = PlanarImage::from_fn_rgb(9, 7, |_, _| [0.0; 3].map(|_: f64| rng.gen_range(0.05..0.2)));
    let base = illumination_invariant(&img, 0.48).unwrap();
    let mut worst = 0.0f64;
    for k in [0.25, 0.5, 2.0, 4.0] {
        let planes: Vec<Vec<f64>> = img.planes().iter().map(|p| p.iter().map(|v| v * k).collect()).collect();
        let scaled = PlanarImage::new(9, 7, img.colorspace(), planes).unwrap();
        let out = illumination_invariant(&scaled, 0.48).unwrap();
        for (a, b) in out.plane(0).iter().zip(base.plane(0)) {
            worst = worst.max((a - b).abs());
        }
    }
    let grays_exact = [0.01, 0.2, 0.5, 0.9, 1.0].iter().all(|&g| {
        let out = illumination_invariant(&PlanarImage::filled_rgb(3, 2, [g; 3]), 0.48).unwrap();
        out.plane(0).iter().all(|&v| v == 0.5)
    });
    check(worst <= 1e-12 && grays_exact, format!("max scale deviation {worst:.1e}, gray -> 0.5 exact: {grays_exact}"))
}

/// `ln x` from the series `2 * sum z^(2k+1) / (2k+1)`, `z = (x-1)/(x+1)`.
fn series_ln(x: f64) -> f64 {
    let z = (x - 1.0) / (x + 1.0);
    let (mut term, mut sum) = (z, 0.0);
    for k in 0..200 {
        sum += term / (2 * k + 1) as f64;
        term *= z * z;
    }
    2.0 * sum
}

fn point_values() -> Verdict {
    let lum = luminance(&PlanarImage::filled_rgb(1, 1, [1.0, 0.0, 0.0]), LuminanceWeights::Printed).unwrap().plane(0)[0];
    // class 0 holds every pixel, so p = 1 for it and p = 0 for the rest
    let stats = ClassStats { counts: vec![100, 0], total: 100 };
    let w = class_weights(&stats, 1.10).unwrap().weights;
    let (o1, o0) = (1.0 / series_ln(2.10), 1.0 / series_ln(1.10));
    let ok = lum == 0.299
        && (w[0] - o1).abs() < 1e-12
        && (w[1] - o0).abs() < 1e-12
        && (w[0] - 1.3478).abs() < 1e-4
        && (w[1] - 10.4921).abs() < 1e-4;
    check(ok, format!("luminance {lum}, w(p=1) {:.6}, w(p=0) {:.6}", w[0], w[1]))
}

fn fog() -> Verdict {
    let mut rng = seeded_rng(9);
    let img = PlanarImage::from_fn_rgb(6, 5, |_, _| [0.0; 3].map(|_: f64| rng.gen_range(0.0..1.0)));
    let depth = DepthMap::new(6, 5, (0..30).map(|_| rng.gen_range(1.0..400.0)).collect()).unwrap();
    let same = simulate_fog(&img, &depth, FogParams::new(0.0)).unwrap() == img;
    let light = 0.8;
    let mut prev: Option<Vec<f64>> = None;
    let mut monotone = true;
    for beta in [0.0, 0.001, 0.005, 0.01, 0.02, 0.05, 0.5] {
        let out = simulate_fog(&img, &depth, FogParams { beta, atmospheric_light: light }).unwrap();
        let gap: Vec<f64> = out.planes().iter().flatten().map(|v| (v - light).abs()).collect();
        if let Some(p) = &prev {
            monotone &= gap.iter().zip(p).all(|(g, q)| g <= q);
        }
        prev = Some(gap);
    }
    let point = simulate_fog(
        &PlanarImage::filled_rgb(1, 1, [0.8; 3]),
        &DepthMap::uniform(1, 1, 100.0),
        FogParams { beta: 0.01, atmospheric_light: 1.0 },
    )
    .unwrap()
    .plane(0)[0];
    check(
        same && monotone && (point - 0.9264).abs() < 1e-4,
        format!("beta=0 bitwise: {same}, monotone: {monotone}, worked point {point:.6}"),
    )
}

struct Scores {
    global: f64,
    class_avg: f64,
    miou: f64,
}

/// Counts pixels directly, class by class.
fn enumerate(gt: &[u8], pred: &[u8], k: u8) -> Option<Scores> {
    let scored: Vec<(u8, u8)> = gt.iter().zip(pred).filter(|(g, _)| **g != IGNORE).map(|(g, p)| (*g, *p)).collect();
    if scored.is_empty() {
        return None;
    }
    let correct = scored.iter().filter(|(g, p)| g == p).count();
    let (mut ious, mut recalls) = (Vec::new(), Vec::new());
    for c in 0..k {
        let tp = scored.iter().filter(|&&(g, p)| g == c && p == c).count();
        let fp = scored.iter().filter(|&&(g, p)| g != c && p == c).count();
        let fneg = scored.iter().filter(|&&(g, p)| g == c && p != c).count();
        if tp + fp + fneg > 0 {
            ious.push(tp as f64 / (tp + fp + fneg) as f64);
        }
        if tp + fneg > 0 {
            recalls.push(tp as f64 / (tp + fneg) as f64);
        }
    }
    Some(Scores {
        global: correct as f64 / scored.len() as f64,
        class_avg: recalls.iter().sum::<f64>() / recalls.len() as f64,
        miou: ious.iter().sum::<f64>() / ious.len() as f64,
    })
}

fn metrics_oracle() -> Verdict {
    let mut rng = seeded_rng(200);
    let mut mismatches = 0;
    for _ in 0..200 {
        let mut draw = |allow_ignore: bool| -> Vec<u8> {
            (0..36)
                .map(|_| if allow_ignore && rng.gen_bool(0.15) { IGNORE } else { rng.gen_range(0..4) })
                .collect()
        };
        let (gt, pred) = (draw(true), draw(false));
        let mut cm = ConfusionMatrix::new(4);
        cm.accumulate(&LabelMap::new(6, 6, gt.clone()).unwrap(), &LabelMap::new(6, 6, pred.clone()).unwrap())
            .unwrap();
        let agree = match (report(&cm, AbsentClasses::Exclude), enumerate(&gt, &pred, 4)) {
            (Ok(r), Some(o)) => r.global_acc == o.global && r.class_avg_acc == o.class_avg && r.mean_iou == o.miou,
            (Err(_), None) => true,
            _ => false,
        };
        mismatches += !agree as usize;
    }
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&LabelMap::new(2, 2, vec![0, 0, 1, 1]).unwrap(), &LabelMap::new(2, 2, vec![0, 1, 1, 1]).unwrap())
        .unwrap();
    let hand = report(&cm, AbsentClasses::Exclude).unwrap().mean_iou;
    check(
        mismatches == 0 && (hand - 0.5833).abs() < 1e-4,
        format!("200 random 6x6 pairs, {mismatches} disagreements; 2x2 case mIoU {hand:.4}"),
    )
}

fn architecture() -> Verdict {
    let spec = NetworkSpec::default();
    let mut params = build_network::<f32>(&spec, &mut seeded_rng(3)).unwrap();
    let mut rng = seeded_rng(4);
    let mut t = Tape::<f32>::new();
    let x = t.constant(Tensor::from_fn(&[1, 3, 64, 128], |_| rng.gen_range(-1.0..1.0)));
    let a = t.constant(Tensor::from_fn(&[1, 2, 64, 128], |_| rng.gen_range(0.0..1.0)));
    let f = forward(&mut t, &mut params, &spec, x, Some(a), NormMode::Train, &mut rng).unwrap();
    let o = &f.outputs;
    let logits = t.shape(o.logits).to_vec();
    let bottleneck = t.shape(o.bottleneck).to_vec();
    let widths: Vec<usize> = o.skip_concats.iter().map(|&(w, _)| w).collect();
    let skips_are_fused = o.skip_concats.iter().all(|&(w, cat)| {
        let fused = o.fused.iter().find(|&&(fw, _)| fw == w).map(|&(_, v)| v);
        t.op_name(cat) == "concat_channels"
            && fused.is_some_and(|v| t.inputs(cat).contains(&v) && t.op_name(v) == "add" && t.shape(v)[1] == w)
    });
    check(
        logits == [1, 19, 64, 128] && bottleneck == [1, 128, 8, 16] && widths == [64, 16] && skips_are_fused,
        format!("logits {logits:?}, bottleneck {bottleneck:?}, skip widths {widths:?}, skips are fusion sums: {skips_are_fused}"),
    )
}

fn trainability() -> Verdict {
    let t0 = Instant::now();
    let samples = shapes_dataset(10, 64, 32, 7).unwrap();
    let opts = BatchOptions::new(InputMode::Rgb, AuxMode::Dl, (32, 64));
    let stats =
        fogsight::dataio::compute_class_stats(samples.iter().filter_map(|s| s.label.as_ref()), 19).unwrap();
    let weights = class_weights(&stats, 1.10).unwrap();
    let mut rng = seeded_rng(1);
    let mut trainer = SegTrainer::new(NetworkSpec::default(), weights, AdamConfig::default(), &mut rng).unwrap();
    for step in 0..400 {
        let picked: Vec<_> = (0..4).map(|j| samples[(step * 4 + j) % 10].clone()).collect();
        trainer.step(&make_batch(&picked, &opts).unwrap(), &mut rng).unwrap();
    }
    let (correct, scored) = trainer.pixel_accuracy(&make_batch(&samples, &opts).unwrap()).unwrap();
    let acc = correct as f64 / scored as f64;
    let elapsed = t0.elapsed();
    check(
        acc >= 0.95 && elapsed < Duration::from_secs(600),
        format!("pixel accuracy {:.2}% after 400 steps in {:.0}s", 100.0 * acc, elapsed.as_secs_f64()),
    )
}

fn joint_wiring() -> Verdict {
    let r = joint_gradient_check(11, 0.10).map_err(|e| e.to_string())?;
    check(
        (r.ratio - 0.10).abs() <= 1e-6 && r.max_rel_dev <= 1e-6,
        format!("ratio {:.9}, max elementwise deviation {:.1e} over {} weights", r.ratio, r.max_rel_dev, r.compared),
    )
}

fn toy_transfer() -> Verdict {
    let t0 = Instant::now();
    let c = veil_corpus(64, 16, 3).unwrap();
    let config = GanConfig::default();
    let steps = config.steps;
    let run = train_toy_gan(&c.pair, ToyGanSpec::default(), config).map_err(|e| e.error.to_string())?;
    let before = mean_abs_error(&c.pair.source, &c.source_clean).unwrap();
    let out = translate(&run.trainer.spec, &run.trainer.generator, &c.pair.source).unwrap();
    let after = mean_abs_error(&out, &c.source_clean).unwrap();
    let reduction = 1.0 - after / before;
    let elapsed = t0.elapsed();

    let mut t = Tape::<f64>::new();
    let half = t.constant(Tensor::full(&[8], 0.5));
    let l = adv_loss(&mut t, half, half, GenLossForm::NonSaturating).unwrap();
    let eq = t.value(l.disc_loss).item().unwrap();
    check(
        reduction >= 0.40 && elapsed < Duration::from_secs(900) && (eq - 2.0 * 2f64.ln()).abs() < 1e-12,
        format!(
            "MAE {before:.4} -> {after:.4} ({:.1}% less) after {steps} steps in {:.0}s; disc_loss at D=1/2 {eq:.4}",
            100.0 * reduction,
            elapsed.as_secs_f64()
        ),
    )
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let run_dir = format!("run.dir={}", dir.path().join(name).display());
        let args = [
            "fogsight", "train", "--set", &run_dir, "--set", "seed=5", "--set", "data.synthetic=6",
            "--set", "data.synthetic_val=2", "--set", "data.height=16", "--set", "data.width=32",
            "--set", "train.steps=8", "--set", "train.batch=3", "--set", "train.checkpoint_every=4",
        ];
        assert_eq!(fogsight::cli::run(args), 0);
        let gan_dir = format!("run.dir={}", dir.path().join(format!("{name}_gan")).display());
        let args = ["fogsight", "gan-train", "--set", &gan_dir, "--set", "gan.steps=25", "--veil", "8"];
        assert_eq!(fogsight::cli::run(args), 0);
    };
    run("a");
    run("b");
    let files = [
        "ckpt_000004.fogw", "ckpt_000008.fogw", "last.fogw", "best.fogw", "trace.csv", "val.csv", "norm.txt",
    ];
    let mut differ: Vec<String> = files
        .iter()
        .filter(|f| bytes(&dir.path().join("a").join(f)) != bytes(&dir.path().join("b").join(f)))
        .map(|f| f.to_string())
        .collect();
    for f in ["generator.fogw", "gan_trace.csv"] {
        if bytes(&dir.path().join("a_gan").join(f)) != bytes(&dir.path().join("b_gan").join(f)) {
            differ.push(format!("gan/{f}"));
        }
    }
    check(differ.is_empty(), format!("{} artifacts compared, differing: {differ:?}", files.len() + 2))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("gradient oracle", gradient_oracle),
        ("convolution equivalence", conv_equivalence),
        ("illumination invariance", invariance),
        ("luminance and class-weight point values", point_values),
        ("fog synthesis", fog),
        ("metrics oracle", metrics_oracle),
        ("architecture audit", architecture),
        ("trainability", trainability),
        ("joint-loss wiring", joint_wiring),
        ("toy domain transfer", toy_transfer),
        ("determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    // panics are reported in the verdict line instead
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
