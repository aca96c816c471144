//! Renders a loss curve from CSV text to a PNG.
//!
//! `cargo run --example plot_trace`

use fogsight::plot::{plot_trace, Trace};

fn main() -> fogsight::Result<()> {
    let mut csv = String::from("step,train,val\n");
    for s in 0..100 {
        let train = 2.5 * (-(s as f64) / 25.0).exp() + 0.1;
        // validation is logged every tenth step only
        let val = if s % 10 == 0 { format!("{:.4}", train * 1.2 + 0.05) } else { String::new() };
        csv.push_str(&format!("{s},{train:.4},{val}\n"));
    }
    let trace = Trace::parse(&csv)?;
    let path = std::env::temp_dir().join("fogsight_examples").join("loss.png");
    std::fs::create_dir_all(path.parent().unwrap()).expect("temp dir");
    plot_trace(&trace, "step", &["train", "val"], &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
