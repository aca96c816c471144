//! A gray wall half in shadow: the invariant plane flattens the shadow edge
//! that dominates the RGB luminance.
//!
//! `cargo run --example illumination_transforms`

use fogsight::imaging::{
    compose_iab, illumination_invariant, luminance, save_png, LuminanceWeights, PlanarImage, PngDepth,
};

fn main() -> fogsight::Result<()> {
    let (w, h) = (64, 32);
    // Daylight-ish surface, darkened and blue-shifted under the shadow.
    let img = PlanarImage::from_fn_rgb(w, h, |x, _| {
        if x < w / 2 {
            [0.62, 0.55, 0.40]
        } else {
            [0.62 * 0.35, 0.55 * 0.38, 0.40 * 0.45]
        }
    });
    let lum = luminance(&img, LuminanceWeights::Printed)?;
    let iit = illumination_invariant(&img, 0.48)?;
    let step = |p: &[f64]| (p[0] - p[w - 1]).abs();
    println!("luminance edge contrast {:.4}", step(lum.plane(0)));
    println!("invariant edge contrast {:.4}", step(iit.plane(0)));

    let iab = compose_iab(&img, 0.48)?;
    println!("iab planes: {}", iab.channels());

    let out = std::env::temp_dir().join("fogsight_examples");
    std::fs::create_dir_all(&out).expect("temp dir");
    save_png(&out.join("shadow_rgb.png"), &img, PngDepth::Eight)?;
    save_png(&out.join("shadow_iit.png"), &iit, PngDepth::Sixteen)?;
    println!("wrote {}", out.display());
    Ok(())
}
