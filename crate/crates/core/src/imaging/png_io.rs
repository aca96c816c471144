//! PNG reading and writing for images, depth maps and label rasters.

use super::{ColorSpace, DepthMap, PlanarImage};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use std::io::Cursor;
use std::path::Path;

/// Stereo baseline of the Cityscapes rig, meters.
pub const CITYSCAPES_BASELINE_M: f64 = 0.209_313;
/// Horizontal focal length of the Cityscapes cameras, pixels.
pub const CITYSCAPES_FOCAL_PX: f64 = 2262.52;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

impl PngDepth {
    fn max(self) -> f64 {
        match self {
            PngDepth::Eight => 255.0,
            PngDepth::Sixteen => 65535.0,
        }
    }
}

/// Decoded samples, interleaved, without any normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPng {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub depth: PngDepth,
    pub samples: Vec<u16>,
}

fn decode_inner(cur: &mut Cursor<&[u8]>) -> std::result::Result<RawPng, png::DecodingError> {
    let mut decoder = png::Decoder::new(cur);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png::DecodingError::LimitsExceeded)?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let (depth, samples): (PngDepth, Vec<u16>) = match info.bit_depth {
        png::BitDepth::Sixteen => (
            PngDepth::Sixteen,
            buf.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
        ),
        _ => (PngDepth::Eight, buf.iter().map(|&b| b as u16).collect()),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    // drop row padding, if any
    let samples: Vec<u16> = if samples.len() == width * height * channels {
        samples
    } else {
        let row = info.line_size / if depth == PngDepth::Sixteen { 2 } else { 1 };
        samples
            .chunks(row)
            .flat_map(|r| r[..width * channels].to_vec())
            .collect()
    };
    Ok(RawPng {
        width,
        height,
        channels,
        depth,
        samples,
    })
}

/// Decodes an in-memory PNG. Errors carry the byte offset at which the
/// decoder gave up; `path` is only used for messages.
pub fn decode_raw_png(bytes: &[u8], path: &Path) -> Result<RawPng> {
    let mut cur = Cursor::new(bytes);
    let result = decode_inner(&mut cur);
    result.map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        offset: cur.position(),
        reason: e.to_string(),
    })
}

pub fn read_raw_png(path: &Path) -> Result<RawPng> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw_png(&bytes, path)
}

pub fn encode_raw_png(raw: &RawPng) -> Result<Vec<u8>> {
    let color = match raw.channels {
        1 => png::ColorType::Grayscale,
        2 => png::ColorType::GrayscaleAlpha,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(Error::Parameter(format!("cannot write {c}-channel PNG"))),
    };
    if raw.samples.len() != raw.width * raw.height * raw.channels {
        return Err(Error::dim("PNG sample count does not match dimensions"));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raw.width as u32, raw.height as u32);
        enc.set_color(color);
        let data: Vec<u8> = match raw.depth {
            PngDepth::Eight => {
                enc.set_depth(png::BitDepth::Eight);
                raw.samples.iter().map(|&s| s.min(255) as u8).collect()
            }
            PngDepth::Sixteen => {
                enc.set_depth(png::BitDepth::Sixteen);
                raw.samples.iter().flat_map(|s| s.to_be_bytes()).collect()
            }
        };
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Parameter(format!("PNG encode: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Parameter(format!("PNG encode: {e}")))?;
    }
    Ok(out)
}

pub fn write_raw_png(path: &Path, raw: &RawPng) -> Result<()> {
    write_atomic(path, &encode_raw_png(raw)?)
}

/// Loads an 8- or 16-bit PNG, mapping samples linearly onto `[0, 1]`.
/// Alpha is discarded; gray images yield a single `Gray` plane.
pub fn load_png(path: &Path) -> Result<PlanarImage> {
    raw_to_image(&read_raw_png(path)?)
}

pub fn raw_to_image(raw: &RawPng) -> Result<PlanarImage> {
    let color_planes = if raw.channels >= 3 { 3 } else { 1 };
    let scale = raw.depth.max();
    let n = raw.width * raw.height;
    let planes = (0..color_planes)
        .map(|c| (0..n).map(|i| raw.samples[i * raw.channels + c] as f64 / scale).collect())
        .collect();
    let cs = if color_planes == 3 { ColorSpace::Rgb } else { ColorSpace::Gray };
    PlanarImage::new(raw.width, raw.height, cs, planes)
}

/// Quantises planes (clamped to `[0, 1]`) into an interleaved PNG raster.
pub fn image_to_raw(img: &PlanarImage, depth: PngDepth) -> Result<RawPng> {
    if img.channels() == 2 {
        return Err(Error::Parameter("two-plane images have no PNG layout".into()));
    }
    let scale = depth.max();
    let n = img.width() * img.height();
    let mut samples = Vec::with_capacity(n * img.channels());
    for i in 0..n {
        for p in img.planes() {
            samples.push((p[i].clamp(0.0, 1.0) * scale).round() as u16);
        }
    }
    Ok(RawPng {
        width: img.width(),
        height: img.height(),
        channels: img.channels(),
        depth,
        samples,
    })
}

pub fn save_png(path: &Path, img: &PlanarImage, depth: PngDepth) -> Result<()> {
    write_raw_png(path, &image_to_raw(img, depth)?)
}

/// How 16-bit depth PNG samples map to meters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DepthDecode {
    /// Cityscapes disparity: `disp = (v - 1) / 256` pixels for `v > 0`,
    /// `depth = baseline * focal / disp`. `v <= 1` is invalid.
    #[default]
    Disparity256,
    /// Direct depth: `depth = v / 256` meters; `v = 0` is invalid.
    Meters16,
}

impl std::str::FromStr for DepthDecode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disparity256" => Ok(DepthDecode::Disparity256),
            "meters16" => Ok(DepthDecode::Meters16),
            other => Err(Error::Config(format!(
                "depth.decode must be disparity256 or meters16, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for DepthDecode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DepthDecode::Disparity256 => "disparity256",
            DepthDecode::Meters16 => "meters16",
        })
    }
}

pub fn decode_depth(raw: &RawPng, decode: DepthDecode) -> Result<DepthMap> {
    if raw.channels != 1 {
        return Err(Error::Parameter(format!(
            "depth PNG must be single-channel, got {} channels",
            raw.channels
        )));
    }
    let mut invalid = vec![false; raw.samples.len()];
    let depth = raw
        .samples
        .iter()
        .zip(invalid.iter_mut())
        .map(|(&v, bad)| {
            let d = match decode {
                DepthDecode::Disparity256 if v > 1 => {
                    CITYSCAPES_BASELINE_M * CITYSCAPES_FOCAL_PX / ((v as f64 - 1.0) / 256.0)
                }
                DepthDecode::Meters16 if v > 0 => v as f64 / 256.0,
                _ => 0.0,
            };
            *bad = d <= 0.0;
            d
        })
        .collect();
    let mut map = DepthMap::new(raw.width, raw.height, depth)?;
    if invalid.iter().any(|&b| b) {
        map.invalid = Some(invalid);
    }
    Ok(map)
}

pub fn load_depth_png(path: &Path, decode: DepthDecode) -> Result<DepthMap> {
    decode_depth(&read_raw_png(path)?, decode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_decoding_of_hand_built_png() {
        let raw = RawPng {
            width: 2,
            height: 2,
            channels: 1,
            depth: PngDepth::Sixteen,
            samples: vec![0, 257, 2561, 25_601],
        };
        let bytes = encode_raw_png(&raw).unwrap();
        let back = decode_raw_png(&bytes, Path::new("d.png")).unwrap();
        assert_eq!(back, raw);

        let disp = decode_depth(&back, DepthDecode::Disparity256).unwrap();
        let bf = CITYSCAPES_BASELINE_M * CITYSCAPES_FOCAL_PX;
        assert_eq!(disp.invalid, Some(vec![true, false, false, false]));
        assert!((disp.depth[1] - bf / 1.0).abs() < 1e-9);
        assert!((disp.depth[2] - bf / 10.0).abs() < 1e-9);
        assert!((disp.depth[3] - bf / 100.0).abs() < 1e-9);

        let meters = decode_depth(&back, DepthDecode::Meters16).unwrap();
        assert_eq!(meters.depth[1], 257.0 / 256.0);
        assert_eq!(meters.depth[3], 25_601.0 / 256.0);
        assert!(!meters.is_valid(0));
    }

    #[test]
    fn truncated_png_is_malformed_with_offset() {
        let img = PlanarImage::filled_rgb(8, 8, [0.3, 0.6, 0.9]);
        let bytes = encode_raw_png(&image_to_raw(&img, PngDepth::Eight).unwrap()).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        match decode_raw_png(cut, Path::new("cut.png")) {
            Err(Error::Malformed { offset, .. }) => assert!(offset > 0),
            other => panic!("expected malformed, got {other:?}"),
        }
    }
}
