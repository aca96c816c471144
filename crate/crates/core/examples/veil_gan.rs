//! Unpaired translation on the veil task: the generator learns to lift a
//! gray haze it never sees paired with clean data.
//!
//! `cargo run --release --example veil_gan [steps]`

use fogsight::gan::{mean_abs_error, train_toy_gan, translate, veil_corpus, GanConfig, ToyGanSpec};

fn main() -> fogsight::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let c = veil_corpus(64, 16, 3)?;
    let config = GanConfig { steps, ..GanConfig::default() };
    let run = train_toy_gan(&c.pair, ToyGanSpec::default(), config).map_err(|a| a.error)?;
    for row in run.trace.iter().step_by((steps as usize / 6).max(1)) {
        println!("{}", row.csv());
    }
    let before = mean_abs_error(&c.pair.source, &c.source_clean)?;
    let after = mean_abs_error(&translate(&run.trainer.spec, &run.trainer.generator, &c.pair.source)?, &c.source_clean)?;
    println!("error to clean: {before:.4} -> {after:.4}");
    Ok(())
}
