//! `train`, `eval` and `stats`.

use super::config::{RunConfig, Weighting};
use super::images::load_translator;
use super::{as_rgb, list_pngs};
use crate::dataio::synthetic::shapes_dataset;
use crate::dataio::{
    augment_hflip, compute_class_stats, compute_norm_stats, load_sample, make_batch, resize_image, scan_dataset,
    BatchOptions, InputMode, LabelMap, LabelTable, Layout, NormStats, ScanOptions, SceneSample, CLASS_NAMES,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gan::{gather, image_to_tensor, GanConfig, GanTrainer, GeneratorTranslator, ToyGanSpec};
use crate::imaging::{load_png, save_png, simulate_fog, FogParams, PngDepth};
use crate::metrics::{format_csv, format_text, report, ConfusionMatrix};
use crate::plot::{plot_trace, Trace};
use crate::segnet::{class_weights, ClassWeights, LayerParams};
use crate::tensor::checkpoint::{self, NamedTensor};
use crate::tensor::{seeded_rng, splitmix_seed, Tensor};
use crate::train::{evaluate, u64_from_tensor, u64_tensor, JointTrainer, SegTrainer};
use rand::seq::SliceRandom;
use rand::Rng as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

pub const TRACE_HEADER: &str = "step,seg_loss,adv_loss,total_loss,disc_loss,lr";

// Random streams derived from the run seed. Per-step streams use the step
// number itself, so these sit at the top of the u64 range.
const INIT_STREAM: u64 = u64::MAX;
const PERM_STREAM: u64 = u64::MAX - 1;
const TRAIN_DATA_STREAM: u64 = u64::MAX - 2;
const VAL_DATA_STREAM: u64 = u64::MAX - 3;

fn label_table(cfg: &RunConfig) -> Result<LabelTable> {
    match &cfg.data.label_table {
        Some(p) => LabelTable::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(LabelTable::cityscapes()),
    }
}

/// Scenes of `split`, or `None` when the split does not exist on disk.
/// A flat layout uses `root/<split>` when present and `root` itself for
/// the training split otherwise.
fn scan_split(cfg: &RunConfig, split: &str, is_train: bool) -> Result<Option<Vec<SceneSample>>> {
    let d = &cfg.data;
    let root = d
        .root
        .as_ref()
        .ok_or_else(|| Error::Config("set data.root or data.synthetic".into()))?;
    let mut opts = ScanOptions::new(d.layout, true);
    opts.image_dir = d.image_dir.clone();
    let scan_root = match d.layout {
        Layout::Flat => {
            let sub = root.join(split);
            if sub.join("img").is_dir() {
                sub
            } else if is_train {
                root.clone()
            } else {
                return Ok(None);
            }
        }
        Layout::Cityscapes => {
            if !root.join(&d.image_dir).join(split).is_dir() {
                if is_train {
                    return Err(Error::Config(format!("split `{split}` not found under {}", root.display())));
                }
                return Ok(None);
            }
            opts.split = Some(split.to_string());
            root.clone()
        }
    };
    let table = label_table(cfg)?;
    let samples = scan_dataset(&scan_root, &opts)?
        .iter()
        .map(|desc| load_sample(desc, d.depth_decode, &table))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(samples))
}

fn fog_samples(cfg: &RunConfig, samples: Vec<SceneSample>) -> Result<Vec<SceneSample>> {
    let d = &cfg.data;
    if d.fog_beta == 0.0 {
        return Ok(samples);
    }
    let p = FogParams { beta: d.fog_beta, atmospheric_light: d.fog_light };
    samples
        .into_iter()
        .map(|mut s| {
            let depth = s
                .depth
                .as_ref()
                .ok_or_else(|| Error::Config(format!("data.fog_beta needs depth, `{}` has none", s.id)))?;
            s.rgb = simulate_fog(&s.rgb, depth, p)?;
            Ok(s)
        })
        .collect()
}

/// Clean scenes of a split before any fog is applied. `train` and any
/// other name resolve to the configured sets; synthetic data replaces disk
/// data when `data.synthetic` is non-zero.
fn clean_split(cfg: &RunConfig, split: &str) -> Result<Option<Vec<SceneSample>>> {
    let d = &cfg.data;
    let is_train = split == d.split;
    if d.synthetic > 0 {
        let (n, stream) = if is_train || d.synthetic_val == 0 {
            (d.synthetic, TRAIN_DATA_STREAM)
        } else {
            (d.synthetic_val, VAL_DATA_STREAM)
        };
        let s = shapes_dataset(n, d.width, d.height, splitmix_seed(cfg.seed, stream))?;
        return Ok(Some(s));
    }
    scan_split(cfg, split, is_train)
}

/// Scenes of `split` exactly as the network sees them, fog included.
pub fn load_split(cfg: &RunConfig, split: &str) -> Result<Option<Vec<SceneSample>>> {
    clean_split(cfg, split)?.map(|s| fog_samples(cfg, s)).transpose()
}

fn require_nonempty(samples: Option<Vec<SceneSample>>, split: &str) -> Result<Vec<SceneSample>> {
    match samples {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::Config(format!("split `{split}` has no samples"))),
    }
}

fn batch_options<'a>(cfg: &RunConfig, norm: Option<&'a NormStats>, t: Option<&'a GeneratorTranslator>) -> BatchOptions<'a> {
    let d = &cfg.data;
    let mut o = BatchOptions::new(d.input_mode, d.aux_mode, (d.height, d.width));
    o.alpha = d.alpha;
    o.luminance = d.luminance;
    o.max_depth_m = d.max_depth_m;
    o.norm = norm;
    o.translator = t.map(|t| t as &dyn crate::dataio::Translator);
    o
}

fn weights_for(cfg: &RunConfig, train: &[SceneSample]) -> Result<ClassWeights> {
    let classes = cfg.model.classes;
    match cfg.train.weighting {
        Weighting::Uniform => Ok(ClassWeights::uniform(classes)),
        Weighting::Log => {
            let stats = compute_class_stats(train.iter().filter_map(|s| s.label.as_ref()), classes)?;
            class_weights(&stats, cfg.train.class_weight_c)
        }
    }
}

fn gan_spec(cfg: &RunConfig) -> ToyGanSpec {
    ToyGanSpec {
        max_correction: cfg.gan.max_correction,
        ..ToyGanSpec::default()
    }
}

fn translator_for(cfg: &RunConfig) -> Result<Option<GeneratorTranslator>> {
    match (&cfg.data.input_mode, &cfg.gan.generator) {
        (InputMode::Gcs, Some(p)) => load_translator(p, cfg.gan.max_correction).map(Some),
        _ => Ok(None),
    }
}

fn read_images(dir: &Path, (h, w): (usize, usize)) -> Result<Tensor<f32>> {
    let imgs = list_pngs(dir)?
        .iter()
        .map(|p| load_png(p).and_then(as_rgb).and_then(|i| resize_image(&i, (w, h))))
        .collect::<Result<Vec<_>>>()?;
    if imgs.is_empty() {
        return Err(Error::Config(format!("no PNG files in {}", dir.display())));
    }
    image_to_tensor(&imgs)
}

enum Model {
    Seg(SegTrainer),
    Joint(Box<JointTrainer>, Tensor<f32>),
}

impl Model {
    fn seg(&mut self) -> &mut SegTrainer {
        match self {
            Model::Seg(s) => s,
            Model::Joint(j, _) => &mut j.seg,
        }
    }

    fn named(&self, step: u64) -> Vec<NamedTensor> {
        let mut out = match self {
            Model::Seg(s) => s.to_named(),
            Model::Joint(j, _) => {
                let mut v = j.seg.to_named();
                v.extend(j.gan.to_named());
                v
            }
        };
        out.push(("state.step".into(), u64_tensor(step)));
        out
    }
}

fn fetch_step(entries: &[NamedTensor]) -> Result<u64> {
    let t = entries
        .iter()
        .find(|(k, _)| k == "state.step")
        .map(|(_, t)| t)
        .ok_or_else(|| Error::CheckpointMismatch {
            layer: "state.step".into(),
            reason: "missing from checkpoint".into(),
        })?;
    u64_from_tensor(t)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

struct Row {
    step: u64,
    seg: f64,
    adv: Option<f64>,
    total: f64,
    disc: Option<f64>,
    lr: f64,
}

impl Row {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.seg,
            fmt_opt(self.adv),
            self.total,
            fmt_opt(self.disc),
            self.lr
        )
    }
}

struct Artifacts<'a> {
    dir: &'a Path,
    rows: Vec<String>,
    timing: Vec<String>,
    val: Vec<String>,
}

impl Artifacts<'_> {
    fn flush(&self) -> Result<()> {
        let body = |header: &str, rows: &[String]| {
            let mut s = format!("{header}\n");
            for r in rows {
                s.push_str(r);
                s.push('\n');
            }
            s
        };
        write_atomic(&self.dir.join("trace.csv"), body(TRACE_HEADER, &self.rows).as_bytes())?;
        write_atomic(&self.dir.join("timing.csv"), body("step,wall_ms", &self.timing).as_bytes())?;
        write_atomic(&self.dir.join("val.csv"), body("step,mean_iou", &self.val).as_bytes())
    }

    /// Keeps the rows of an earlier run up to and including `step`.
    fn resume_from(&mut self, step: u64) -> Result<()> {
        let keep = |file: &str| -> Result<Vec<String>> {
            let p = self.dir.join(file);
            let Ok(text) = std::fs::read_to_string(&p) else {
                return Ok(Vec::new());
            };
            Ok(text
                .lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step))
                .map(str::to_string)
                .collect())
        };
        self.rows = keep("trace.csv")?;
        self.timing = keep("timing.csv")?;
        self.val = keep("val.csv")?;
        Ok(())
    }
}

fn read_best(dir: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(dir.join("best.txt")).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("mean_iou "))
        .and_then(|v| v.trim().parse().ok())
}

/// Trains for `train.steps` (or `train.epochs` worth of) steps. Returns
/// the final step number.
///
/// Step `s` draws its batch from the epoch permutation and all other
/// randomness from `splitmix_seed(seed, s)`, so a resumed run replays an
/// uninterrupted one exactly.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<u64> {
    let d = &cfg.data;
    let dir = cfg.run_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("config.txt"), cfg.to_text().as_bytes())?;

    let clean = require_nonempty(clean_split(cfg, &d.split)?, &d.split)?;
    let train = fog_samples(cfg, clean.clone())?;
    let val = match &d.val_split {
        Some(v) if v != &d.split && (d.synthetic == 0 || d.synthetic_val > 0) => load_split(cfg, v)?,
        _ => None,
    };
    let translator = translator_for(cfg)?;
    let norm = if d.normalize {
        let n = compute_norm_stats(&train, &batch_options(cfg, None, translator.as_ref()))?;
        n.save(&dir.join("norm.txt"))?;
        Some(n)
    } else {
        None
    };
    let opts = batch_options(cfg, norm.as_ref(), translator.as_ref());
    let weights = weights_for(cfg, &train)?;
    let adam = cfg.train.adam;

    let gan_config = GanConfig {
        steps: cfg.gan.steps,
        batch: cfg.train.batch,
        seed: cfg.seed,
        adam: cfg.gan_adam(),
        gen_loss: cfg.gan.gen_loss,
        freeze_generator: false,
    };
    let targets = || -> Result<Tensor<f32>> {
        match &cfg.gan.target_dir {
            Some(t) => read_images(t, (d.height, d.width)),
            None => {
                let imgs = clean
                    .iter()
                    .map(|s| resize_image(&s.rgb, (d.width, d.height)))
                    .collect::<Result<Vec<_>>>()?;
                image_to_tensor(&imgs)
            }
        }
    };

    let (mut model, start) = match resume {
        Some(p) => {
            let entries = checkpoint::load(p)?;
            let mut seg = SegTrainer::from_named(cfg.model.clone(), weights, adam, &entries)?;
            seg.reduction = cfg.train.reduction;
            let model = if cfg.train.joint {
                let gan = GanTrainer::from_named(gan_spec(cfg), gan_config, &entries)?;
                Model::Joint(Box::new(JointTrainer { seg, gan, lambda_seg: cfg.train.lambda_seg }), targets()?)
            } else {
                Model::Seg(seg)
            };
            (model, fetch_step(&entries)?)
        }
        None => {
            let mut rng = seeded_rng(splitmix_seed(cfg.seed, INIT_STREAM));
            let mut seg = SegTrainer::new(cfg.model.clone(), weights, adam, &mut rng)?;
            seg.reduction = cfg.train.reduction;
            let model = if cfg.train.joint {
                let mut gan = GanTrainer::new(gan_spec(cfg), gan_config)?;
                if let Some(g) = &cfg.gan.generator {
                    gan.generator = load_translator(g, cfg.gan.max_correction)?.params;
                }
                Model::Joint(Box::new(JointTrainer { seg, gan, lambda_seg: cfg.train.lambda_seg }), targets()?)
            } else {
                Model::Seg(seg)
            };
            (model, 0)
        }
    };

    let n = train.len();
    let batch = cfg.train.batch.min(n);
    let per_epoch = n.div_ceil(batch) as u64;
    let total = if cfg.train.steps > 0 { cfg.train.steps } else { cfg.train.epochs * per_epoch };
    let every = cfg.train.checkpoint_every.max(1);
    let mut art = Artifacts { dir, rows: Vec::new(), timing: Vec::new(), val: Vec::new() };
    let mut best = None;
    if start > 0 {
        art.resume_from(start)?;
        best = read_best(dir);
        eprintln!("resuming at step {}", start + 1);
    }

    let mut epoch_cache: Option<(u64, Vec<usize>)> = None;
    let clock = Instant::now();
    for step in start + 1..=total {
        let epoch = (step - 1) / per_epoch;
        let pos = ((step - 1) % per_epoch) as usize;
        if epoch_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seeded_rng(splitmix_seed(splitmix_seed(cfg.seed, PERM_STREAM), epoch)));
            epoch_cache = Some((epoch, perm));
        }
        let perm = &epoch_cache.as_ref().expect("filled").1;
        let idx = &perm[pos * batch..((pos + 1) * batch).min(n)];

        let mut rng = seeded_rng(splitmix_seed(cfg.seed, step));
        let picked: Vec<SceneSample> = idx
            .iter()
            .map(|&i| if d.hflip { augment_hflip(train[i].clone(), &mut rng) } else { train[i].clone() })
            .collect();
        let b = make_batch(&picked, &opts)?;
        let result = match &mut model {
            Model::Seg(s) => s.step(&b, &mut rng).map(|r| Row {
                step: r.step,
                seg: r.seg_loss,
                adv: None,
                total: r.seg_loss,
                disc: None,
                lr: adam.learning_rate,
            }),
            Model::Joint(j, targets) => {
                let nt = targets.shape()[0];
                let ti: Vec<usize> = (0..idx.len()).map(|_| rng.gen_range(0..nt)).collect();
                let y = gather(targets, &ti);
                j.step(&b, &y, &mut rng).map(|r| Row {
                    step,
                    seg: r.seg_loss,
                    adv: Some(r.adv_loss),
                    total: r.total_loss,
                    disc: Some(r.disc_loss),
                    lr: adam.learning_rate,
                })
            }
        };
        let row = match result {
            Ok(r) => r,
            Err(e) => {
                art.flush()?;
                return Err(e);
            }
        };
        art.rows.push(row.csv());
        art.timing.push(format!("{step},{}", clock.elapsed().as_millis()));
        if step % 10 == 0 || step == total {
            eprintln!("step {step}/{total} loss {:.4}", row.total);
        }

        if step % every == 0 || step == total {
            let entries = model.named(step);
            checkpoint::save(&dir.join(format!("ckpt_{step:06}.fogw")), &entries)?;
            checkpoint::save(&dir.join("last.fogw"), &entries)?;
            if let Some(v) = val.as_ref().filter(|v| !v.is_empty()) {
                let gen_t = match &model {
                    Model::Joint(j, _) => Some(j.gan.translator()),
                    Model::Seg(_) => None,
                };
                let mut vopts = batch_options(cfg, norm.as_ref(), translator.as_ref());
                if let Some(t) = &gen_t {
                    vopts.input_mode = InputMode::Gcs;
                    vopts.translator = Some(t);
                }
                let seg = model.seg();
                let cm = evaluate(&mut seg.params, &seg.spec, v, &vopts, batch, |_, _| Ok(()))?;
                if let Ok(r) = report(&cm, cfg.absent) {
                    art.val.push(format!("{step},{}", r.mean_iou));
                    if best.is_none_or(|b| r.mean_iou > b) {
                        best = Some(r.mean_iou);
                        checkpoint::save(&dir.join("best.fogw"), &entries)?;
                        write_atomic(&dir.join("best.txt"), format!("step {step}\nmean_iou {}\n", r.mean_iou).as_bytes())?;
                    }
                }
            }
            art.flush()?;
        }
    }
    art.flush()?;
    let trace = Trace::parse(&std::fs::read_to_string(dir.join("trace.csv")).map_err(|e| Error::io(dir, e))?)?;
    let cols: &[&str] = if cfg.train.joint { &["seg_loss", "adv_loss", "total_loss"] } else { &["seg_loss"] };
    plot_trace(&trace, "step", cols, &dir.join("trace.png"))?;
    Ok(total)
}

/// Source of the label maps being scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Predictor {
    Net,
    /// The ground truth itself.
    Oracle,
    /// Every pixel gets this class.
    Constant(u8),
}

impl FromStr for Predictor {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "net" => Ok(Self::Net),
            "oracle" => Ok(Self::Oracle),
            _ => s
                .strip_prefix("constant:")
                .and_then(|k| k.parse().ok())
                .map(Self::Constant)
                .ok_or_else(|| format!("expected net, oracle or constant:K, got `{s}`")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub ckpt: Option<PathBuf>,
    pub pred_out: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub min_miou: Option<f64>,
    pub predictor: Predictor,
    pub split: Option<String>,
    pub norm: Option<PathBuf>,
}

fn save_prediction(dir: &Path, id: &str, map: &LabelMap) -> Result<()> {
    save_png(&dir.join(format!("{id}.png")), &map.colorize(), PngDepth::Eight)
}

/// Scores one split. Returns 2 when `min_miou` is set and not reached.
pub fn cmd_eval(cfg: &RunConfig, a: &EvalArgs) -> Result<i32> {
    let split = a
        .split
        .clone()
        .or_else(|| cfg.data.val_split.clone())
        .unwrap_or_else(|| cfg.data.split.clone());
    let samples = require_nonempty(load_split(cfg, &split)?, &split)?;
    let classes = cfg.model.classes;
    let mut cm = ConfusionMatrix::new(classes);
    match a.predictor {
        Predictor::Oracle | Predictor::Constant(_) => {
            if let Predictor::Constant(k) = a.predictor {
                if k as usize >= classes {
                    return Err(Error::Usage(format!("constant class {k} outside 0..{classes}")));
                }
            }
            for s in &samples {
                let gt = s
                    .label
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("sample `{}` has no label", s.id)))?;
                let pred = match a.predictor {
                    Predictor::Constant(k) => LabelMap::filled(gt.width, gt.height, k)?,
                    _ => gt.clone(),
                };
                cm.accumulate(gt, &pred)?;
                if let Some(dir) = &a.pred_out {
                    save_prediction(dir, &s.id, &pred)?;
                }
            }
        }
        Predictor::Net => {
            let ckpt = a
                .ckpt
                .as_deref()
                .ok_or_else(|| Error::Usage("--predictor net needs --ckpt".into()))?;
            let entries = checkpoint::load(ckpt)?;
            let mut params = LayerParams::from_named(&cfg.model, &entries, "net.")?;
            let norm = if cfg.data.normalize {
                let p = a
                    .norm
                    .clone()
                    .unwrap_or_else(|| ckpt.with_file_name("norm.txt"));
                Some(NormStats::load(&p)?)
            } else {
                None
            };
            let joint_gen = if entries.iter().any(|(k, _)| k.starts_with("gen.")) {
                let spec = gan_spec(cfg);
                Some(GeneratorTranslator { params: spec.from_named(&entries, "gen.", true)?, spec })
            } else {
                None
            };
            let loaded = translator_for(cfg)?;
            let mut opts = batch_options(cfg, norm.as_ref(), loaded.as_ref());
            if let Some(t) = &joint_gen {
                opts.input_mode = InputMode::Gcs;
                opts.translator = Some(t);
            }
            cm = evaluate(&mut params, &cfg.model, &samples, &opts, cfg.train.batch, |b, pred| {
                if let Some(dir) = &a.pred_out {
                    for (i, id) in b.ids.iter().enumerate() {
                        save_prediction(dir, id, &pred.map(i))?;
                    }
                }
                Ok(())
            })?;
        }
    }
    let r = report(&cm, cfg.absent)?;
    let text = format_text(&r);
    print!("{text}");
    let dir = a.report_dir.clone().unwrap_or_else(|| cfg.run_dir.join("eval"));
    write_atomic(&dir.join("metrics.txt"), text.as_bytes())?;
    write_atomic(&dir.join("metrics.csv"), format_csv(&r).as_bytes())?;
    if let Some(m) = a.min_miou {
        if r.mean_iou.is_nan() || r.mean_iou < m {
            eprintln!("mean IoU {:.4} is below the required {m}", r.mean_iou);
            return Ok(2);
        }
    }
    Ok(0)
}

/// Prints pixel counts, frequencies and loss weights for every class.
pub fn cmd_stats(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let split = &cfg.data.split;
    let samples = require_nonempty(clean_split(cfg, split)?, split)?;
    let classes = cfg.model.classes;
    let stats = compute_class_stats(samples.iter().filter_map(|s| s.label.as_ref()), classes)?;
    let w = class_weights(&stats, cfg.train.class_weight_c)?;
    let p = stats.probabilities().unwrap_or_else(|| vec![0.0; classes]);
    let mut csv = String::from("class,name,pixels,frequency,weight\n");
    println!("{:>5} {:<14} {:>12} {:>10} {:>9}", "class", "name", "pixels", "frequency", "weight");
    for c in 0..classes {
        let name = CLASS_NAMES.get(c).copied().unwrap_or("?");
        println!("{c:>5} {name:<14} {:>12} {:>10.6} {:>9.4}", stats.counts[c], p[c], w.weights[c]);
        csv.push_str(&format!("{c},{name},{},{},{}\n", stats.counts[c], p[c], w.weights[c]));
    }
    println!("scored pixels: {}  c = {}", stats.total, cfg.train.class_weight_c);
    if let Some(path) = out {
        write_atomic(path, csv.as_bytes())?;
    }
    Ok(())
}
