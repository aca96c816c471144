use super::{ColorSpace, DepthMap, PlanarImage};
use crate::error::{Error, Result};

/// Default atmospheric light for fog synthesis.
pub const DEFAULT_ATMOSPHERIC_LIGHT: f64 = 0.8;

/// Attenuation coefficients (per meter) of the light, medium and dense
/// Foggy Cityscapes releases.
pub const PAPER_BETAS: [f64; 3] = [0.005, 0.01, 0.02];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FogParams {
    /// Attenuation coefficient per meter.
    pub beta: f64,
    pub atmospheric_light: f64,
}

impl FogParams {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            atmospheric_light: DEFAULT_ATMOSPHERIC_LIGHT,
        }
    }
}

/// Homogeneous haze: `t = exp(-beta * d)`, `out = A + t * (in - A)` per
/// channel (the same convex blend as `t * in + (1 - t) * A`). Masked depth
/// pixels use the largest valid depth of the map.
pub fn simulate_fog(img: &PlanarImage, depth: &DepthMap, p: FogParams) -> Result<PlanarImage> {
    img.require(ColorSpace::Rgb, "simulate_fog")?;
    if depth.width != img.width() || depth.height != img.height() {
        return Err(Error::dim(format!(
            "depth map {}x{} does not match image {}x{}",
            depth.width,
            depth.height,
            img.width(),
            img.height()
        )));
    }
    if !(p.beta >= 0.0) || !(0.0..=1.0).contains(&p.atmospheric_light) {
        return Err(Error::Parameter(format!("invalid fog parameters {p:?}")));
    }
    if p.beta == 0.0 {
        return Ok(img.clone());
    }
    let fallback = depth.max_valid().unwrap_or(f64::INFINITY);
    let trans: Vec<f64> = (0..depth.depth.len())
        .map(|i| {
            let d = if depth.is_valid(i) { depth.depth[i] } else { fallback };
            (-p.beta * d).exp()
        })
        .collect();
    let a = p.atmospheric_light;
    let planes = img
        .planes()
        .iter()
        .map(|plane| {
            plane
                .iter()
                .zip(&trans)
                .map(|(&v, &t)| if t == 1.0 { v } else { (a + t * (v - a)).clamp(0.0, 1.0) })
                .collect()
        })
        .collect();
    PlanarImage::new(img.width(), img.height(), ColorSpace::Rgb, planes)
}
