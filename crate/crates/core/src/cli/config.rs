//! `key = value` run configuration.

use crate::dataio::{AuxMode, InputMode, Layout, DEFAULT_MAX_DEPTH_M};
use crate::error::{Error, Result};
use crate::gan::{GenLossForm, DEFAULT_GAN_LR, DEFAULT_LAMBDA_SEG};
use crate::imaging::{DepthDecode, LuminanceWeights, DEFAULT_ALPHA, DEFAULT_ATMOSPHERIC_LIGHT};
use crate::metrics::AbsentClasses;
use crate::segnet::{NetworkSpec, DEFAULT_C};
use crate::tensor::{AdamConfig, Reduction};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const SEED_ENV: &str = "FOGSIGHT_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `1 / ln(c + p_class)` from training-set frequencies.
    #[default]
    Log,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub layout: Layout,
    pub split: String,
    pub val_split: Option<String>,
    pub image_dir: String,
    pub label_table: Option<PathBuf>,
    pub depth_decode: DepthDecode,
    pub input_mode: InputMode,
    pub aux_mode: AuxMode,
    pub height: usize,
    pub width: usize,
    pub alpha: f64,
    pub luminance: LuminanceWeights,
    pub max_depth_m: f64,
    pub hflip: bool,
    pub normalize: bool,
    /// Generated scenes used instead of `root` when non-zero.
    pub synthetic: usize,
    pub synthetic_val: usize,
    /// Fog applied to every loaded scene; 0 leaves scenes untouched.
    pub fog_beta: f64,
    pub fog_light: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Total optimiser steps; 0 derives them from `epochs`.
    pub steps: u64,
    pub epochs: u64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub weighting: Weighting,
    pub class_weight_c: f64,
    /// `loss.reduction`: mean over scored pixels, or their plain sum.
    pub reduction: Reduction,
    pub checkpoint_every: u64,
    pub joint: bool,
    pub lambda_seg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanSection {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub gen_loss: GenLossForm,
    pub height: usize,
    pub width: usize,
    pub max_correction: f64,
    /// Generator checkpoint for the `gcs` input mode or to start joint training.
    pub generator: Option<PathBuf>,
    /// Clear-domain images for joint training.
    pub target_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub run_dir: PathBuf,
    pub data: DataConfig,
    pub model: NetworkSpec,
    pub train: TrainConfig,
    pub gan: GanSection,
    pub absent: AbsentClasses,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            data: DataConfig {
                root: None,
                layout: Layout::default(),
                split: "train".into(),
                val_split: Some("val".into()),
                image_dir: "leftImg8bit".into(),
                label_table: None,
                depth_decode: DepthDecode::default(),
                input_mode: InputMode::Rgb,
                aux_mode: AuxMode::Dl,
                height: 64,
                width: 128,
                alpha: DEFAULT_ALPHA,
                luminance: LuminanceWeights::default(),
                max_depth_m: DEFAULT_MAX_DEPTH_M,
                hflip: true,
                normalize: true,
                synthetic: 0,
                synthetic_val: 0,
                fog_beta: 0.0,
                fog_light: DEFAULT_ATMOSPHERIC_LIGHT,
            },
            model: NetworkSpec::default(),
            train: TrainConfig {
                steps: 0,
                epochs: 100,
                batch: 4,
                adam: AdamConfig::default(),
                weighting: Weighting::Log,
                class_weight_c: DEFAULT_C,
                reduction: Reduction::Mean,
                checkpoint_every: 100,
                joint: false,
                lambda_seg: DEFAULT_LAMBDA_SEG,
            },
            gan: GanSection {
                steps: 2000,
                batch: 8,
                lr: DEFAULT_GAN_LR,
                gen_loss: GenLossForm::NonSaturating,
                height: 16,
                width: 16,
                max_correction: 1.0,
                generator: None,
                target_dir: None,
            },
            absent: AbsentClasses::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or(String::new(), |p| p.display().to_string())
}

fn luminance_name(w: LuminanceWeights) -> &'static str {
    match w {
        LuminanceWeights::Printed => "printed",
        LuminanceWeights::Rec601 => "rec601",
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.data;
        let t = &mut self.train;
        let g = &mut self.gan;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "run.dir" => self.run_dir = PathBuf::from(v),
            "data.root" => d.root = opt_path(v),
            "data.layout" => d.layout = v.parse()?,
            "data.split" => d.split = v.into(),
            "data.val_split" => d.val_split = (!v.is_empty()).then(|| v.to_string()),
            "data.image_dir" => d.image_dir = v.into(),
            "data.label_table" => d.label_table = opt_path(v),
            "data.depth_decode" => d.depth_decode = v.parse()?,
            "data.input_mode" => d.input_mode = v.parse()?,
            "data.aux_mode" => d.aux_mode = v.parse()?,
            "data.height" => d.height = parse(key, v)?,
            "data.width" => d.width = parse(key, v)?,
            "data.alpha" => d.alpha = parse(key, v)?,
            "data.luminance" => {
                d.luminance = match v {
                    "printed" => LuminanceWeights::Printed,
                    "rec601" => LuminanceWeights::Rec601,
                    _ => return Err(Error::Config(format!("{key} must be printed or rec601, got `{v}`"))),
                }
            }
            "data.max_depth_m" => d.max_depth_m = parse(key, v)?,
            "data.hflip" => d.hflip = parse(key, v)?,
            "data.normalize" => d.normalize = parse(key, v)?,
            "data.synthetic" => d.synthetic = parse(key, v)?,
            "data.synthetic_val" => d.synthetic_val = parse(key, v)?,
            "data.fog_beta" => d.fog_beta = parse(key, v)?,
            "data.fog_light" => d.fog_light = parse(key, v)?,
            "train.steps" => t.steps = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.batch" => t.batch = parse(key, v)?,
            "train.lr" => t.adam.learning_rate = parse(key, v)?,
            "train.beta1" => t.adam.beta1 = parse(key, v)?,
            "train.beta2" => t.adam.beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam.epsilon = parse(key, v)?,
            "train.weighting" => {
                t.weighting = match v {
                    "log" => Weighting::Log,
                    "uniform" => Weighting::Uniform,
                    _ => return Err(Error::Config(format!("{key} must be log or uniform, got `{v}`"))),
                }
            }
            "train.class_weight_c" => t.class_weight_c = parse(key, v)?,
            "loss.reduction" => {
                t.reduction = match v {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(Error::Config(format!("{key} must be mean or sum, got `{v}`"))),
                }
            }
            "train.checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "train.joint" => t.joint = parse(key, v)?,
            "train.lambda_seg" => t.lambda_seg = parse(key, v)?,
            "gan.steps" => g.steps = parse(key, v)?,
            "gan.batch" => g.batch = parse(key, v)?,
            "gan.lr" => g.lr = parse(key, v)?,
            "gan.gen_loss" => g.gen_loss = v.parse()?,
            "gan.height" => g.height = parse(key, v)?,
            "gan.width" => g.width = parse(key, v)?,
            "gan.max_correction" => g.max_correction = parse(key, v)?,
            "gan.generator" => g.generator = opt_path(v),
            "gan.target_dir" => g.target_dir = opt_path(v),
            "metrics.absent" => self.absent = v.parse()?,
            k if k.starts_with("model.") => {
                if k == "model.aux_channels" {
                    return Err(Error::Config("model.aux_channels follows data.aux_mode".into()));
                }
                self.model.set(k, v)?
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let d = &self.data;
        let t = &self.train;
        let g = &self.gan;
        let mut out: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("run.dir".into(), self.run_dir.display().to_string()),
            ("data.root".into(), show_path(&d.root)),
            ("data.layout".into(), d.layout.to_string()),
            ("data.split".into(), d.split.clone()),
            ("data.val_split".into(), d.val_split.clone().unwrap_or_default()),
            ("data.image_dir".into(), d.image_dir.clone()),
            ("data.label_table".into(), show_path(&d.label_table)),
            ("data.depth_decode".into(), d.depth_decode.to_string()),
            ("data.input_mode".into(), d.input_mode.to_string()),
            ("data.aux_mode".into(), d.aux_mode.to_string()),
            ("data.height".into(), d.height.to_string()),
            ("data.width".into(), d.width.to_string()),
            ("data.alpha".into(), d.alpha.to_string()),
            ("data.luminance".into(), luminance_name(d.luminance).into()),
            ("data.max_depth_m".into(), d.max_depth_m.to_string()),
            ("data.hflip".into(), d.hflip.to_string()),
            ("data.normalize".into(), d.normalize.to_string()),
            ("data.synthetic".into(), d.synthetic.to_string()),
            ("data.synthetic_val".into(), d.synthetic_val.to_string()),
            ("data.fog_beta".into(), d.fog_beta.to_string()),
            ("data.fog_light".into(), d.fog_light.to_string()),
        ];
        out.extend(self.model.entries().into_iter().filter(|(k, _)| k != "model.aux_channels"));
        out.extend([
            ("train.steps".into(), t.steps.to_string()),
            ("train.epochs".into(), t.epochs.to_string()),
            ("train.batch".into(), t.batch.to_string()),
            ("train.lr".into(), t.adam.learning_rate.to_string()),
            ("train.beta1".into(), t.adam.beta1.to_string()),
            ("train.beta2".into(), t.adam.beta2.to_string()),
            ("train.adam_eps".into(), t.adam.epsilon.to_string()),
            (
                "train.weighting".into(),
                match t.weighting {
                    Weighting::Log => "log",
                    Weighting::Uniform => "uniform",
                }
                .into(),
            ),
            ("train.class_weight_c".into(), t.class_weight_c.to_string()),
            (
                "loss.reduction".into(),
                match t.reduction {
                    Reduction::Mean => "mean",
                    Reduction::Sum => "sum",
                }
                .into(),
            ),
            ("train.checkpoint_every".into(), t.checkpoint_every.to_string()),
            ("train.joint".into(), t.joint.to_string()),
            ("train.lambda_seg".into(), t.lambda_seg.to_string()),
            ("gan.steps".into(), g.steps.to_string()),
            ("gan.batch".into(), g.batch.to_string()),
            ("gan.lr".into(), g.lr.to_string()),
            (
                "gan.gen_loss".into(),
                match g.gen_loss {
                    GenLossForm::NonSaturating => "non_saturating",
                    GenLossForm::Minimax => "minimax",
                }
                .into(),
            ),
            ("gan.height".into(), g.height.to_string()),
            ("gan.width".into(), g.width.to_string()),
            ("gan.max_correction".into(), g.max_correction.to_string()),
            ("gan.generator".into(), show_path(&g.generator)),
            ("gan.target_dir".into(), show_path(&g.target_dir)),
            (
                "metrics.absent".into(),
                match self.absent {
                    AbsentClasses::Exclude => "exclude",
                    AbsentClasses::Zero => "zero",
                }
                .into(),
            ),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved fogsight configuration\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.sync();
        Ok(c)
    }

    /// Loads `path` (if any), then `overrides` (`key=value`), then the seed
    /// environment variable, and validates the result.
    pub fn resolve(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut c = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            c.apply_text(&text)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            c.set(k.trim(), v.trim())?;
        }
        if let Some(s) = env_seed {
            c.seed = parse(SEED_ENV, s)?;
        }
        c.sync();
        c.validate()?;
        Ok(c)
    }

    fn sync(&mut self) {
        self.model.aux_channels = self.data.aux_mode.channels();
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.height % 8 != 0 || d.width % 8 != 0 || d.height == 0 || d.width == 0 {
            return Err(Error::Config(format!(
                "data.height and data.width must be positive multiples of 8, got {}x{}",
                d.height, d.width
            )));
        }
        if self.train.batch == 0 || self.gan.batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.train.joint {
            if d.input_mode != InputMode::Rgb {
                return Err(Error::Config("train.joint feeds the generator and needs data.input_mode = rgb".into()));
            }
            if d.normalize {
                return Err(Error::Config("train.joint needs data.normalize = false".into()));
            }
        }
        if d.input_mode == InputMode::Gcs && self.gan.generator.is_none() {
            return Err(Error::Config("data.input_mode = gcs needs gan.generator".into()));
        }
        self.train.adam.validate()?;
        self.model.validate()
    }

    pub fn gan_adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.gan.lr,
            ..self.train.adam
        }
    }
}
