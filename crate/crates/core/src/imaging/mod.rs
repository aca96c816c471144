//! Per-image transforms: illumination-invariant log-chromaticity, luminance,
//! LAB/HSV conversions and their hybrids, and depth-driven fog synthesis.
//!
//! All transforms are pure per-pixel maps over [`PlanarImage`]s.

mod color;
mod fog;
pub mod png_io;

pub use color::{rgb_to_hsv, rgb_to_lab};
pub use fog::{simulate_fog, FogParams, DEFAULT_ATMOSPHERIC_LIGHT, PAPER_BETAS};
pub use png_io::{
    decode_depth, decode_raw_png, encode_raw_png, image_to_raw, load_depth_png, load_png, raw_to_image, read_raw_png, save_png,
    write_raw_png, DepthDecode, PngDepth, RawPng, CITYSCAPES_BASELINE_M, CITYSCAPES_FOCAL_PX,
};

use crate::error::{Error, Result};

/// Channel floor applied before taking logarithms (one 8-bit quantum).
pub const CHANNEL_FLOOR: f64 = 1.0 / 255.0;

/// Invariant-transform weight for the Bumblebee-2 reference camera.
pub const DEFAULT_ALPHA: f64 = 0.48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    Lab,
    Hsv,
    Gray,
    Invariant,
    Iab,
    Ihs,
}

/// Channels-first image with one `f64` plane per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    colorspace: ColorSpace,
    planes: Vec<Vec<f64>>,
}

impl PlanarImage {
    pub fn new(width: usize, height: usize, colorspace: ColorSpace, planes: Vec<Vec<f64>>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("empty {width}x{height} image")));
        }
        if planes.is_empty() || planes.len() > 3 {
            return Err(Error::dim(format!("{} planes; expected 1 to 3", planes.len())));
        }
        if let Some(p) = planes.iter().find(|p| p.len() != width * height) {
            return Err(Error::dim(format!(
                "plane of {} values for a {width}x{height} image",
                p.len()
            )));
        }
        Ok(Self {
            width,
            height,
            colorspace,
            planes,
        })
    }

    /// Uniform RGB image.
    pub fn filled_rgb(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let planes = rgb.iter().map(|&v| vec![v; width * height]).collect();
        Self::new(width, height, ColorSpace::Rgb, planes).expect("valid dimensions")
    }

    pub fn from_fn_rgb(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut planes = vec![Vec::with_capacity(width * height); 3];
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                for c in 0..3 {
                    planes[c].push(px[c]);
                }
            }
        }
        Self::new(width, height, ColorSpace::Rgb, planes).expect("valid dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.planes[c]
    }

    pub fn planes(&self) -> &[Vec<f64>] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Vec<f64>> {
        self.planes
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vec<f64> {
        let i = y * self.width + x;
        self.planes.iter().map(|p| p[i]).collect()
    }

    pub(crate) fn require(&self, cs: ColorSpace, op: &str) -> Result<()> {
        if self.colorspace != cs {
            return Err(Error::Parameter(format!(
                "{op} expects a {cs:?} image, got {:?}",
                self.colorspace
            )));
        }
        Ok(())
    }

    fn rgb_pixels(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.width * self.height).map(|i| (self.planes[0][i], self.planes[1][i], self.planes[2][i]))
    }
}

/// Per-pixel depth in meters, with an optional mask of invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub invalid: Option<Vec<bool>>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::dim(format!(
                "{} depth values for a {width}x{height} map",
                depth.len()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            invalid: None,
        })
    }

    pub fn uniform(width: usize, height: usize, meters: f64) -> Self {
        Self::new(width, height, vec![meters; width * height]).expect("sized")
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.invalid.as_ref().is_none_or(|m| !m[i])
    }

    /// Largest valid depth, used in place of masked pixels.
    pub fn max_valid(&self) -> Option<f64> {
        (0..self.depth.len())
            .filter(|&i| self.is_valid(i))
            .map(|i| self.depth[i])
            .fold(None, |m, d| Some(m.map_or(d, |m: f64| m.max(d))))
    }
}

/// Log-chromaticity illumination-invariant plane:
/// `0.5 + ln G - alpha ln B - (1 - alpha) ln R`, channels floored at
/// [`CHANNEL_FLOOR`]. The output is not clipped.
pub fn illumination_invariant(img: &PlanarImage, alpha: f64) -> Result<PlanarImage> {
    img.require(ColorSpace::Rgb, "illumination_invariant")?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let plane = img
        .rgb_pixels()
        .map(|(r, g, b)| {
            let (lr, lg, lb) = (
                r.max(CHANNEL_FLOOR).ln(),
                g.max(CHANNEL_FLOOR).ln(),
                b.max(CHANNEL_FLOOR).ln(),
            );
            // grouped so that equal channels cancel exactly
            0.5 + (lg - lr) - alpha * (lb - lr)
        })
        .collect();
    PlanarImage::new(img.width, img.height, ColorSpace::Invariant, vec![plane])
}

/// Luma weights. `Printed` keeps the 0.144 blue weight whose coefficients sum
/// to 1.030; `Rec601` uses the usual 0.114.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LuminanceWeights {
    #[default]
    Printed,
    Rec601,
}

impl LuminanceWeights {
    pub fn coefficients(self) -> [f64; 3] {
        match self {
            LuminanceWeights::Printed => [0.299, 0.587, 0.144],
            LuminanceWeights::Rec601 => [0.299, 0.587, 0.114],
        }
    }
}

pub fn luminance(img: &PlanarImage, weights: LuminanceWeights) -> Result<PlanarImage> {
    img.require(ColorSpace::Rgb, "luminance")?;
    let [wr, wg, wb] = weights.coefficients();
    let plane = img.rgb_pixels().map(|(r, g, b)| wr * r + wg * g + wb * b).collect();
    PlanarImage::new(img.width, img.height, ColorSpace::Gray, vec![plane])
}

/// Invariant plane followed by the a, b planes of [`rgb_to_lab`].
pub fn compose_iab(img: &PlanarImage, alpha: f64) -> Result<PlanarImage> {
    let inv = illumination_invariant(img, alpha)?;
    let lab = rgb_to_lab(img)?;
    let mut planes = inv.into_planes();
    planes.extend(lab.into_planes().into_iter().skip(1));
    PlanarImage::new(img.width, img.height, ColorSpace::Iab, planes)
}

/// Invariant plane followed by the hue, saturation planes of [`rgb_to_hsv`].
pub fn compose_ihs(img: &PlanarImage, alpha: f64) -> Result<PlanarImage> {
    let inv = illumination_invariant(img, alpha)?;
    let hsv = rgb_to_hsv(img)?;
    let mut planes = inv.into_planes();
    planes.extend(hsv.into_planes().into_iter().take(2));
    PlanarImage::new(img.width, img.height, ColorSpace::Ihs, planes)
}

/// Mirrors every plane about the vertical axis.
pub fn flip_horizontal(img: &PlanarImage) -> PlanarImage {
    let planes = img
        .planes
        .iter()
        .map(|p| flip_rows(p, img.width))
        .collect();
    PlanarImage { planes, ..img.clone() }
}

pub(crate) fn flip_rows<T: Copy>(data: &[T], width: usize) -> Vec<T> {
    data.chunks(width)
        .flat_map(|row| row.iter().rev().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_pixel_maps_to_half() {
        let img = PlanarImage::filled_rgb(2, 2, [0.5, 0.5, 0.5]);
        let inv = illumination_invariant(&img, 0.48).unwrap();
        assert!(inv.plane(0).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn invariant_point_value() {
        // 0.5 + ln 2 - 0.48 ln 3
        let img = PlanarImage::filled_rgb(1, 1, [0.2, 0.4, 0.6]);
        let v = illumination_invariant(&img, 0.48).unwrap().plane(0)[0];
        assert!((v - 0.665_813_2).abs() < 1e-6, "{v}");
    }

    #[test]
    fn invariant_ignores_global_scale() {
        let a = PlanarImage::filled_rgb(1, 1, [0.1, 0.2, 0.3]);
        let b = PlanarImage::filled_rgb(1, 1, [0.2, 0.4, 0.6]);
        let va = illumination_invariant(&a, 0.48).unwrap().plane(0)[0];
        let vb = illumination_invariant(&b, 0.48).unwrap().plane(0)[0];
        assert!((va - vb).abs() < 1e-12);
    }

    #[test]
    fn invariant_rejects_bad_inputs() {
        let img = PlanarImage::filled_rgb(1, 1, [0.1, 0.2, 0.3]);
        assert!(illumination_invariant(&img, 1.0).is_err());
        let gray = luminance(&img, LuminanceWeights::Printed).unwrap();
        assert!(illumination_invariant(&gray, 0.5).is_err());
    }

    #[test]
    fn luminance_coefficients() {
        let lum = |rgb| luminance(&PlanarImage::filled_rgb(1, 1, rgb), LuminanceWeights::Printed).unwrap().plane(0)[0];
        assert_eq!(lum([1.0, 0.0, 0.0]), 0.299);
        assert_eq!(lum([0.0, 0.0, 0.0]), 0.0);
        assert!((lum([1.0, 1.0, 1.0]) - 1.030).abs() < 1e-12);
        let std = luminance(&PlanarImage::filled_rgb(1, 1, [1.0; 3]), LuminanceWeights::Rec601).unwrap();
        assert!((std.plane(0)[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iab_of_gray_image() {
        let img = PlanarImage::filled_rgb(3, 2, [0.4, 0.4, 0.4]);
        let iab = compose_iab(&img, 0.48).unwrap();
        assert_eq!(iab.colorspace(), ColorSpace::Iab);
        assert!(iab.plane(0).iter().all(|&v| v == 0.5));
        for c in 1..3 {
            assert!(iab.plane(c).iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6));
        }
    }

    #[test]
    fn ihs_of_red_uses_clamped_invariant() {
        let img = PlanarImage::filled_rgb(1, 1, [1.0, 0.0, 0.0]);
        let ihs = compose_ihs(&img, 0.48).unwrap();
        // ln(1/255) - 0.48 ln(1/255) - 0.52 ln 1 = 0.52 ln(1/255)
        let expect = 0.5 + 0.52 * (1.0f64 / 255.0).ln();
        assert!((ihs.plane(0)[0] - expect).abs() < 1e-12);
        assert_eq!(ihs.plane(1)[0], 0.0);
        assert_eq!(ihs.plane(2)[0], 1.0);
    }

    #[test]
    fn flip_mirrors_rows() {
        assert_eq!(flip_rows(&[1, 2, 3, 4], 2), vec![2, 1, 4, 3]);
    }
}
