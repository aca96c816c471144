//! Scores a prediction against ground truth and prints the report.
//!
//! `cargo run --example evaluate_metrics`

use fogsight::dataio::{LabelMap, IGNORE};
use fogsight::metrics::{format_csv, format_text, report, AbsentClasses, ConfusionMatrix};

fn main() -> fogsight::Result<()> {
    let gt = LabelMap::new(4, 2, vec![0, 0, 1, 1, 2, 2, IGNORE, 13])?;
    let pred = LabelMap::new(4, 2, vec![0, 1, 1, 1, 2, 0, 5, 13])?;
    let mut cm = ConfusionMatrix::new(19);
    cm.accumulate(&gt, &pred)?;
    let r = report(&cm, AbsentClasses::Exclude)?;
    print!("{}", format_text(&r));
    println!();
    print!("{}", format_csv(&r));
    Ok(())
}
