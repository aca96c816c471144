//! Synthetic labelled scenes turned into network batches in each input
//! representation, with class statistics and loss weights.
//!
//! `cargo run --example dataset_batches`

use fogsight::dataio::synthetic::shapes_dataset;
use fogsight::dataio::{compute_class_stats, compute_norm_stats, make_batch, AuxMode, BatchOptions, InputMode, CLASS_NAMES};
use fogsight::segnet::class_weights;

fn main() -> fogsight::Result<()> {
    let samples = shapes_dataset(6, 64, 32, 1)?;
    let stats = compute_class_stats(samples.iter().filter_map(|s| s.label.as_ref()), 19)?;
    let weights = class_weights(&stats, 1.10)?;
    for (c, name) in CLASS_NAMES.iter().enumerate().filter(|&(c, _)| stats.counts[c] > 0) {
        println!("{name:<14} {:>6} px  weight {:.3}", stats.counts[c], weights.weights[c]);
    }

    for mode in [InputMode::Rgb, InputMode::Iit, InputMode::Iab, InputMode::Ihs] {
        let mut opts = BatchOptions::new(mode, AuxMode::Dl, (32, 64));
        let norm = compute_norm_stats(&samples, &opts)?;
        opts.norm = Some(&norm);
        let b = make_batch(&samples[..4], &opts)?;
        let aux = b.aux.as_ref().map(|a| a.shape().to_vec());
        println!("{mode:?}: input {:?}, aux {aux:?}, labels {}", b.input.shape(), b.labels.ids.len());
    }
    Ok(())
}
