use super::{ColorSpace, PlanarImage};
use crate::error::Result;

// sRGB (D65) -> XYZ. The white point is taken as the row sums so that
// RGB white lands exactly on L* = 100, a* = b* = 0.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Rescaled CIELAB (D65): planes are `L/100`, `(a+128)/255`, `(b+128)/255`.
pub fn rgb_to_lab(img: &PlanarImage) -> Result<PlanarImage> {
    img.require(ColorSpace::Rgb, "rgb_to_lab")?;
    let white: Vec<f64> = RGB_TO_XYZ.iter().map(|row| row.iter().sum()).collect();
    let n = img.width() * img.height();
    let mut planes = vec![Vec::with_capacity(n); 3];
    for (r, g, b) in img.rgb_pixels() {
        let lin = [srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b)];
        let xyz: Vec<f64> = RGB_TO_XYZ
            .iter()
            .zip(&white)
            .map(|(row, wn)| (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / wn)
            .collect();
        let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
        let l = 116.0 * fy - 16.0;
        let a = 500.0 * (fx - fy);
        let bb = 200.0 * (fy - fz);
        planes[0].push(l / 100.0);
        planes[1].push((a + 128.0) / 255.0);
        planes[2].push((bb + 128.0) / 255.0);
    }
    PlanarImage::new(img.width(), img.height(), ColorSpace::Lab, planes)
}

/// HSV with hue as a fraction of a turn in `[0, 1)`.
pub fn rgb_to_hsv(img: &PlanarImage) -> Result<PlanarImage> {
    img.require(ColorSpace::Rgb, "rgb_to_hsv")?;
    let n = img.width() * img.height();
    let mut planes = vec![Vec::with_capacity(n); 3];
    for (r, g, b) in img.rgb_pixels() {
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let hue = if delta == 0.0 {
            0.0
        } else if max == r {
            ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            (b - r) / delta + 2.0
        } else {
            (r - g) / delta + 4.0
        } / 6.0;
        let sat = if max == 0.0 { 0.0 } else { delta / max };
        planes[0].push(if hue >= 1.0 { 0.0 } else { hue });
        planes[1].push(sat);
        planes[2].push(max);
    }
    PlanarImage::new(img.width(), img.height(), ColorSpace::Hsv, planes)
}
