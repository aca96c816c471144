//! The `fogsight` command line. [`run`] parses arguments, dispatches to one
//! subcommand and maps the outcome to a process exit code.
//!
//! Exit codes: 0 on full success, 1 on any failure, 2 on usage errors and
//! when `eval --min-miou` is not met.

mod config;
mod gan_cmd;
mod images;
mod train_cmd;

pub use config::{DataConfig, GanSection, RunConfig, TrainConfig, Weighting, SEED_ENV};
pub use train_cmd::{load_split, Predictor, TRACE_HEADER};

use crate::diagnostics::{format_suite, run_gradcheck_suite};
use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, PlanarImage};
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "fogsight", version, about = "Foggy-scene semantic segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let env = std::env::var(SEED_ENV).ok();
        RunConfig::resolve(self.config.as_deref(), &self.set, env.as_deref())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a transformed copy of every PNG in a directory.
    Transform {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// iit, iab, ihs or luminance.
        #[arg(long)]
        transform: images::TransformKind,
        #[arg(long, default_value_t = crate::imaging::DEFAULT_ALPHA)]
        alpha: f64,
        /// printed or rec601 luminance coefficients.
        #[arg(long, default_value = "printed")]
        luminance: String,
    },
    /// Adds homogeneous fog using per-image depth maps.
    Fog {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Attenuation per meter; repeatable.
        #[arg(long)]
        beta: Vec<f64>,
        /// Adds the light, medium and dense Foggy Cityscapes densities.
        #[arg(long)]
        paper_betas: bool,
        #[arg(long, default_value_t = crate::imaging::DEFAULT_ATMOSPHERIC_LIGHT)]
        light: f64,
        /// disparity256 or meters16.
        #[arg(long, default_value = "disparity256")]
        depth_decode: String,
    },
    /// Trains the segmentation network, optionally jointly with the generator.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Scores predictions on a labelled split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Directory for colourised predictions.
        #[arg(long)]
        pred_out: Option<PathBuf>,
        /// Directory for metrics.txt and metrics.csv; defaults to `<run.dir>/eval`.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        /// Exit with code 2 when mean IoU falls below this.
        #[arg(long)]
        min_miou: Option<f64>,
        /// net, oracle or constant:K.
        #[arg(long, default_value = "net")]
        predictor: Predictor,
        /// Split to score; defaults to `data.val_split`.
        #[arg(long)]
        split: Option<String>,
        /// Normalisation sidecar; defaults to norm.txt beside the checkpoint.
        #[arg(long)]
        norm: Option<PathBuf>,
    },
    /// Trains the toy foggy-to-clear generator.
    GanTrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Foggy-domain images; with --target, replaces the synthetic veil task.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
        /// Scenes per domain in the synthetic veil task.
        #[arg(long, default_value_t = 64)]
        veil: usize,
        /// Output directory; defaults to `run.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a trained generator over a directory of images.
    Translate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        max_correction: f64,
    },
    /// Finite-difference checks of every differentiable primitive.
    Gradcheck {
        /// `all` or one primitive name.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Class frequencies and loss weights of the training split.
    Stats {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs one subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Transform { input, out, transform, alpha, luminance } => {
            let weights = match luminance.as_str() {
                "printed" => crate::imaging::LuminanceWeights::Printed,
                "rec601" => crate::imaging::LuminanceWeights::Rec601,
                other => return Err(Error::Usage(format!("--luminance must be printed or rec601, got `{other}`"))),
            };
            images::cmd_transform(&input, &out, transform, alpha, weights)
        }
        Command::Fog { input, depth, out, mut beta, paper_betas, light, depth_decode } => {
            if paper_betas {
                beta.extend(crate::imaging::PAPER_BETAS);
            }
            images::cmd_fog(&input, &depth, &out, &beta, light, depth_decode.parse()?)
        }
        Command::Train { cfg, resume } => train_cmd::cmd_train(&cfg.resolve()?, resume.as_deref()).map(|_| 0),
        Command::Eval { cfg, ckpt, pred_out, report_dir, min_miou, predictor, split, norm } => {
            let opts = train_cmd::EvalArgs {
                ckpt,
                pred_out,
                report_dir,
                min_miou,
                predictor,
                split,
                norm,
            };
            train_cmd::cmd_eval(&cfg.resolve()?, &opts)
        }
        Command::GanTrain { cfg, source, target, veil, out } => {
            let cfg = cfg.resolve()?;
            let out = out.unwrap_or_else(|| cfg.run_dir.clone());
            gan_cmd::cmd_gan_train(&cfg, source.as_deref(), target.as_deref(), veil, &out)
        }
        Command::Translate { input, out, ckpt, max_correction } => {
            images::cmd_translate(&input, &out, &ckpt, max_correction)
        }
        Command::Gradcheck { scope, seed, inject_fault } => {
            let scope = (scope != "all").then_some(scope.as_str());
            let rows = run_gradcheck_suite(scope, seed, inject_fault.as_deref())?;
            print!("{}", format_suite(&rows));
            Ok(if rows.iter().all(|r| r.passed) { 0 } else { 1 })
        }
        Command::Stats { cfg, out } => train_cmd::cmd_stats(&cfg.resolve()?, out.as_deref()).map(|_| 0),
    }
}

/// PNG files directly inside `dir`, sorted by name.
pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Gray rasters become three equal planes; anything else passes through.
pub(crate) fn as_rgb(img: PlanarImage) -> Result<PlanarImage> {
    if img.colorspace() != ColorSpace::Gray {
        return Ok(img);
    }
    let p = img.plane(0).to_vec();
    PlanarImage::new(img.width(), img.height(), ColorSpace::Rgb, vec![p.clone(), p.clone(), p])
}

/// Prints every per-item failure and turns a non-empty list into exit 1.
pub(crate) fn finish(failures: &[(PathBuf, Error)]) -> i32 {
    for (p, e) in failures {
        eprintln!("error: {}: {e}", p.display());
    }
    if failures.is_empty() {
        0
    } else {
        eprintln!("{} item(s) failed", failures.len());
        1
    }
}
