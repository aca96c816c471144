//! Fits a handful of synthetic scenes; accuracy should climb well past 90%.
//!
//! `cargo run --release --example train_overfit [steps]`

use fogsight::dataio::synthetic::shapes_dataset;
use fogsight::dataio::{compute_class_stats, make_batch, AuxMode, BatchOptions, InputMode};
use fogsight::segnet::{class_weights, NetworkSpec};
use fogsight::tensor::{seeded_rng, AdamConfig};
use fogsight::train::SegTrainer;

fn main() -> fogsight::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let samples = shapes_dataset(10, 64, 32, 7)?;
    let opts = BatchOptions::new(InputMode::Rgb, AuxMode::Dl, (32, 64));
    let stats = compute_class_stats(samples.iter().filter_map(|s| s.label.as_ref()), 19)?;
    let mut rng = seeded_rng(1);
    let mut trainer = SegTrainer::new(NetworkSpec::default(), class_weights(&stats, 1.10)?, AdamConfig::default(), &mut rng)?;
    let all = make_batch(&samples, &opts)?;

    for step in 0..steps {
        let picked: Vec<_> = (0..4).map(|j| samples[(step * 4 + j) % samples.len()].clone()).collect();
        let r = trainer.step(&make_batch(&picked, &opts)?, &mut rng)?;
        if (step + 1) % 50 == 0 {
            let (correct, scored) = trainer.pixel_accuracy(&all)?;
            println!("step {:>4}  loss {:.4}  accuracy {:.1}%", step + 1, r.seg_loss, 100.0 * correct as f64 / scored as f64);
        }
    }
    Ok(())
}
