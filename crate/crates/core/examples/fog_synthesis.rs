//! Renders one scene at several fog densities and reports how much contrast
//! survives at each.
//!
//! `cargo run --example fog_synthesis`

use fogsight::imaging::{simulate_fog, DepthMap, FogParams, PlanarImage, DEFAULT_ATMOSPHERIC_LIGHT, PAPER_BETAS};

fn contrast(img: &PlanarImage) -> f64 {
    let p = img.plane(0);
    let max = p.iter().cloned().fold(f64::MIN, f64::max);
    let min = p.iter().cloned().fold(f64::MAX, f64::min);
    max - min
}

fn main() -> fogsight::Result<()> {
    let (w, h) = (48, 32);
    // Checkerboard receding from 5 m at the bottom row to 300 m at the top.
    let img = PlanarImage::from_fn_rgb(w, h, |x, y| if (x / 4 + y / 4) % 2 == 0 { [0.9; 3] } else { [0.1; 3] });
    let depth = DepthMap::new(w, h, (0..w * h).map(|i| 300.0 - 295.0 * (i / w) as f64 / (h - 1) as f64).collect())?;

    println!("beta     contrast");
    println!("{:<8} {:.4}", 0.0, contrast(&img));
    for beta in PAPER_BETAS {
        let fogged = simulate_fog(&img, &depth, FogParams { beta, atmospheric_light: DEFAULT_ATMOSPHERIC_LIGHT })?;
        println!("{beta:<8} {:.4}", contrast(&fogged));
    }
    Ok(())
}
