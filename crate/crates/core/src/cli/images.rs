//! Directory-to-directory image commands: `transform`, `fog`, `translate`.

use super::{as_rgb, finish, list_pngs};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gan::{GeneratorTranslator, ToyGanSpec};
use crate::imaging::{
    compose_iab, compose_ihs, illumination_invariant, load_depth_png, load_png, luminance, raw_to_image,
    read_raw_png, save_png, simulate_fog, DepthDecode, FogParams, LuminanceWeights, PngDepth,
};
use crate::dataio::Translator;
use crate::tensor::checkpoint;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Iit,
    Iab,
    Ihs,
    Luminance,
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "iit" => Ok(Self::Iit),
            "iab" => Ok(Self::Iab),
            "ihs" => Ok(Self::Ihs),
            "luminance" => Ok(Self::Luminance),
            _ => Err(format!("expected iit, iab, ihs or luminance, got `{s}`")),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn warn_empty(dir: &Path) -> i32 {
    eprintln!("warning: no PNG files in {}", dir.display());
    0
}

/// Outputs are 16-bit so single-plane results keep four decimals.
pub fn cmd_transform(input: &Path, out: &Path, kind: TransformKind, alpha: f64, weights: LuminanceWeights) -> Result<i32> {
    let files = list_pngs(input)?;
    if files.is_empty() {
        return Ok(warn_empty(input));
    }
    ensure_dir(out)?;
    let mut failures = Vec::new();
    for f in files {
        let result = load_png(&f).and_then(as_rgb).and_then(|img| {
            let t = match kind {
                TransformKind::Iit => illumination_invariant(&img, alpha)?,
                TransformKind::Iab => compose_iab(&img, alpha)?,
                TransformKind::Ihs => compose_ihs(&img, alpha)?,
                TransformKind::Luminance => luminance(&img, weights)?,
            };
            save_png(&out.join(f.file_name().expect("listed file")), &t, PngDepth::Sixteen)
        });
        if let Err(e) = result {
            failures.push((f, e));
        }
    }
    Ok(finish(&failures))
}

/// Sibling directory that holds the outputs for one density.
pub fn beta_dir(out: &Path, beta: f64) -> PathBuf {
    out.join(format!("beta_{beta}"))
}

/// One `beta_<b>` directory per density, each with a `fog_params.txt`
/// sidecar. Outputs keep the bit depth of their inputs.
pub fn cmd_fog(input: &Path, depth: &Path, out: &Path, betas: &[f64], light: f64, decode: DepthDecode) -> Result<i32> {
    if betas.is_empty() {
        return Err(Error::Usage("give at least one --beta or --paper-betas".into()));
    }
    let mut betas = betas.to_vec();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    for &b in &betas {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::Usage(format!("--beta {b} must be finite and non-negative")));
        }
    }
    if !(0.0..=1.0).contains(&light) {
        return Err(Error::Usage(format!("--light {light} must lie in [0, 1]")));
    }
    let files = list_pngs(input)?;
    if files.is_empty() {
        return Ok(warn_empty(input));
    }
    for &b in &betas {
        let dir = beta_dir(out, b);
        ensure_dir(&dir)?;
        let meta = format!("beta {b}\natmospheric_light {light}\ndepth_decode {decode}\n");
        write_atomic(&dir.join("fog_params.txt"), meta.as_bytes())?;
    }
    let mut failures = Vec::new();
    for f in files {
        let name = f.file_name().expect("listed file").to_owned();
        let dpath = depth.join(&name);
        if !dpath.is_file() {
            let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let e = Error::Config(format!("no depth map for `{stem}` (expected {})", dpath.display()));
            failures.push((f, e));
            continue;
        }
        let result = (|| {
            let raw = read_raw_png(&f)?;
            let img = as_rgb(raw_to_image(&raw)?)?;
            let d = load_depth_png(&dpath, decode)?;
            for &b in &betas {
                let fogged = simulate_fog(&img, &d, FogParams { beta: b, atmospheric_light: light })?;
                save_png(&beta_dir(out, b).join(&name), &fogged, raw.depth)?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            failures.push((f, e));
        }
    }
    Ok(finish(&failures))
}

/// Loads the generator stored under `gen.` in a checkpoint.
pub fn load_translator(ckpt: &Path, max_correction: f64) -> Result<GeneratorTranslator> {
    let entries = checkpoint::load(ckpt)?;
    let spec = ToyGanSpec { max_correction, ..ToyGanSpec::default() };
    spec.validate()?;
    let params = spec.from_named(&entries, "gen.", true)?;
    Ok(GeneratorTranslator { spec, params })
}

pub fn cmd_translate(input: &Path, out: &Path, ckpt: &Path, max_correction: f64) -> Result<i32> {
    let t = load_translator(ckpt, max_correction)?;
    let files = list_pngs(input)?;
    if files.is_empty() {
        return Ok(warn_empty(input));
    }
    ensure_dir(out)?;
    let mut failures = Vec::new();
    for f in files {
        let result = load_png(&f)
            .and_then(as_rgb)
            .and_then(|img| t.translate_image(&img))
            .and_then(|img| save_png(&out.join(f.file_name().expect("listed file")), &img, PngDepth::Eight));
        if let Err(e) = result {
            failures.push((f, e));
        }
    }
    Ok(finish(&failures))
}
