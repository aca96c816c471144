//! Finite-difference audit of every differentiable primitive, then of the
//! combined segmentation/adversarial objective.
//!
//! `cargo run --release --example gradcheck`

use fogsight::diagnostics::{format_suite, run_gradcheck_suite};
use fogsight::gan::joint_gradient_check;

fn main() -> fogsight::Result<()> {
    print!("{}", format_suite(&run_gradcheck_suite(None, 0, None)?));
    let j = joint_gradient_check(0, 0.10)?;
    println!("segmentation share of joint gradient {:.6} (max deviation {:.1e})", j.ratio, j.max_rel_dev);
    Ok(())
}
