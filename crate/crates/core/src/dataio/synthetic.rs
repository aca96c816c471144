//! Procedural street-like scenes with exact labels and depth, for tests,
//! examples and smoke runs.

use super::labels::LabelMap;
use super::scan::SceneSample;
use crate::error::Result;
use crate::fsutil::write_atomic;
use crate::imaging::png_io::{encode_raw_png, PngDepth, RawPng};
use crate::imaging::{save_png, DepthMap, PlanarImage};
use crate::tensor::{seeded_rng, Rng};
use rand::Rng as _;
use std::path::Path;

const ROAD: u8 = 0;
const BUILDING: u8 = 2;
const SKY: u8 = 10;
const PERSON: u8 = 11;
const CAR: u8 = 13;

fn base_color(class: u8) -> [f64; 3] {
    match class {
        ROAD => [0.35, 0.3, 0.35],
        BUILDING => [0.55, 0.45, 0.35],
        SKY => [0.55, 0.7, 0.9],
        PERSON => [0.85, 0.2, 0.25],
        CAR => [0.1, 0.15, 0.6],
        _ => [0.5, 0.5, 0.5],
    }
}

/// One `w x h` scene: sky over buildings over road, with a car rectangle and
/// a person ellipse at random positions. Depth grows toward the horizon.
pub fn shapes_scene(id: &str, width: usize, height: usize, rng: &mut Rng) -> Result<SceneSample> {
    let horizon = height / 3 + rng.gen_range(0..=height / 8);
    let skyline = horizon / 2 + rng.gen_range(0..=horizon / 3);
    let car_w = (width / 4).max(2);
    let car_h = (height / 6).max(2);
    let car_x = rng.gen_range(0..width - car_w + 1);
    let car_y = (horizon + rng.gen_range(0..=height - horizon - car_h)).min(height - car_h);
    let (pr_x, pr_y) = ((width / 16).max(1) as f64, (height / 6).max(1) as f64);
    let pc_x = rng.gen_range(pr_x..=width as f64 - pr_x);
    let pc_y = rng.gen_range(horizon as f64..=height as f64 - pr_y);

    let mut ids = vec![0u8; width * height];
    let mut depth = vec![0f64; width * height];
    let mut noise = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let ground = 2.0 + 80.0 * (height - y) as f64 / (height - horizon + 1) as f64;
            let (class, d) = if (car_x..car_x + car_w).contains(&x) && (car_y..car_y + car_h).contains(&y) {
                (CAR, 8.0)
            } else if ((x as f64 + 0.5 - pc_x) / pr_x).powi(2) + ((y as f64 + 0.5 - pc_y) / pr_y).powi(2) <= 1.0 {
                (PERSON, 5.0)
            } else if y >= horizon {
                (ROAD, ground)
            } else if y >= skyline {
                (BUILDING, 120.0)
            } else {
                (SKY, 250.0)
            };
            ids[i] = class;
            depth[i] = d;
            noise.push(rng.gen_range(-0.04..0.04));
        }
    }
    let rgb = PlanarImage::from_fn_rgb(width, height, |x, y| {
        let i = y * width + x;
        base_color(ids[i]).map(|c| (c + noise[i]).clamp(0.0, 1.0))
    });
    SceneSample::new(
        id,
        rgb,
        Some(DepthMap::new(width, height, depth)?),
        Some(LabelMap::new(width, height, ids)?),
    )
}

/// `n` scenes named `scene_000`, `scene_001`, ...
pub fn shapes_dataset(n: usize, width: usize, height: usize, seed: u64) -> Result<Vec<SceneSample>> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| shapes_scene(&format!("scene_{i:03}"), width, height, &mut rng))
        .collect()
}

/// Writes samples in the `flat` layout; depth is stored as meters x 256.
pub fn write_flat_dataset(root: &Path, samples: &[SceneSample]) -> Result<()> {
    for dir in ["img", "depth", "label"] {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| crate::Error::io(&d, e))?;
    }
    for s in samples {
        let name = format!("{}.png", s.id);
        save_png(&root.join("img").join(&name), &s.rgb, PngDepth::Eight)?;
        if let Some(d) = &s.depth {
            let raw = RawPng {
                width: d.width,
                height: d.height,
                channels: 1,
                depth: PngDepth::Sixteen,
                samples: (0..d.depth.len())
                    .map(|i| if d.is_valid(i) { (d.depth[i] * 256.0).round().clamp(1.0, 65535.0) as u16 } else { 0 })
                    .collect(),
            };
            write_atomic(&root.join("depth").join(&name), &encode_raw_png(&raw)?)?;
        }
        if let Some(l) = &s.label {
            write_atomic(&root.join("label").join(&name), &encode_raw_png(&l.to_raw_png())?)?;
        }
    }
    Ok(())
}
