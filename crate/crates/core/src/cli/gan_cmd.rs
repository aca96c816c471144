//! `gan-train`.

use super::config::RunConfig;
use super::{as_rgb, list_pngs};
use crate::dataio::resize_image;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::gan::{
    image_to_tensor, mean_abs_error, train_toy_gan, translate, veil_corpus, DomainPair, GanConfig, GanTraceRow,
    ToyGanSpec, GAN_TRACE_HEADER,
};
use crate::imaging::load_png;
use crate::plot::{plot_trace, Trace};
use crate::tensor::{checkpoint, Tensor};
use std::path::Path;

fn domain(dir: &Path, (h, w): (usize, usize)) -> Result<Tensor<f32>> {
    let imgs = list_pngs(dir)?
        .iter()
        .map(|p| load_png(p).and_then(as_rgb).and_then(|i| resize_image(&i, (w, h))))
        .collect::<Result<Vec<_>>>()?;
    if imgs.is_empty() {
        return Err(Error::Config(format!("no PNG files in {}", dir.display())));
    }
    image_to_tensor(&imgs)
}

fn write_trace(out: &Path, trace: &[GanTraceRow]) -> Result<()> {
    let mut s = format!("{GAN_TRACE_HEADER}\n");
    for r in trace {
        s.push_str(&r.csv());
        s.push('\n');
    }
    write_atomic(&out.join("gan_trace.csv"), s.as_bytes())
}

/// Trains on `source`/`target` directories, or on the synthetic veil task
/// with `veil` scenes per domain when neither is given. Writes
/// `generator.fogw`, `gan_trace.csv`, `gan_trace.png` and, for the veil
/// task, `veil_report.txt`.
pub fn cmd_gan_train(cfg: &RunConfig, source: Option<&Path>, target: Option<&Path>, veil: usize, out: &Path) -> Result<i32> {
    let g = &cfg.gan;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_atomic(&out.join("config.txt"), cfg.to_text().as_bytes())?;
    let (pair, clean) = match (source, target) {
        (Some(s), Some(t)) => {
            let size = (g.height, g.width);
            (DomainPair::new(domain(s, size)?, domain(t, size)?)?, None)
        }
        (None, None) => {
            if g.height != g.width {
                return Err(Error::Config(format!(
                    "the veil task uses square scenes, got gan.height {} and gan.width {}",
                    g.height, g.width
                )));
            }
            let c = veil_corpus(veil, g.height, cfg.seed)?;
            (c.pair, Some(c.source_clean))
        }
        _ => return Err(Error::Usage("give both --source and --target, or neither".into())),
    };
    let spec = ToyGanSpec {
        max_correction: g.max_correction,
        ..ToyGanSpec::default()
    };
    let config = GanConfig {
        steps: g.steps,
        batch: g.batch,
        seed: cfg.seed,
        adam: cfg.gan_adam(),
        gen_loss: g.gen_loss,
        freeze_generator: false,
    };
    let run = match train_toy_gan(&pair, spec, config) {
        Ok(r) => r,
        Err(a) => {
            write_trace(out, &a.trace)?;
            return Err(a.error);
        }
    };
    write_trace(out, &run.trace)?;
    checkpoint::save(&out.join("generator.fogw"), &run.trainer.to_named())?;
    let trace = Trace::parse(&std::fs::read_to_string(out.join("gan_trace.csv")).map_err(|e| Error::io(out, e))?)?;
    plot_trace(&trace, "step", &["disc_loss", "gen_loss"], &out.join("gan_trace.png"))?;
    if let Some(clean) = clean {
        let before = mean_abs_error(&pair.source, &clean)?;
        let after = mean_abs_error(&translate(&run.trainer.spec, &run.trainer.generator, &pair.source)?, &clean)?;
        let text = format!(
            "mae_before {before}\nmae_after {after}\nreduction {}\n",
            1.0 - after / before
        );
        print!("{text}");
        write_atomic(&out.join("veil_report.txt"), text.as_bytes())?;
    }
    Ok(0)
}
