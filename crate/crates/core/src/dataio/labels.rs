use crate::error::{Error, Result};
use crate::imaging::png_io::{read_raw_png, PngDepth, RawPng};
use crate::imaging::{flip_rows, ColorSpace, PlanarImage};
use std::path::Path;

pub const IGNORE: u8 = 255;
pub const NUM_CLASSES: usize = 19;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

const CITYSCAPES_TABLE: &str = include_str!("../../data/cityscapes_label_ids.txt");

/// Whether ids are raw dataset label ids or compact training ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelSpace {
    Raw,
    Train,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u8>,
    pub space: LabelSpace,
}

impl LabelMap {
    /// Training-id map; every id must be below [`NUM_CLASSES`] or [`IGNORE`].
    pub fn new(width: usize, height: usize, ids: Vec<u8>) -> Result<Self> {
        Self::check_len(width, height, &ids)?;
        if let Some(&bad) = ids.iter().find(|&&v| v != IGNORE && v as usize >= NUM_CLASSES) {
            return Err(Error::Parameter(format!(
                "train id {bad} outside 0..{NUM_CLASSES}"
            )));
        }
        Ok(Self {
            width,
            height,
            ids,
            space: LabelSpace::Train,
        })
    }

    pub fn raw(width: usize, height: usize, ids: Vec<u8>) -> Result<Self> {
        Self::check_len(width, height, &ids)?;
        Ok(Self {
            width,
            height,
            ids,
            space: LabelSpace::Raw,
        })
    }

    fn check_len(width: usize, height: usize, ids: &[u8]) -> Result<()> {
        if width == 0 || height == 0 || ids.len() != width * height {
            return Err(Error::dim(format!(
                "{} label ids for a {width}x{height} map",
                ids.len()
            )));
        }
        Ok(())
    }

    pub fn filled(width: usize, height: usize, id: u8) -> Result<Self> {
        Self::new(width, height, vec![id; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.ids[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            ids: flip_rows(&self.ids, self.width),
            ..self.clone()
        }
    }

    /// Palette rendering; ignored pixels are black.
    pub fn colorize(&self) -> PlanarImage {
        let mut planes = vec![Vec::with_capacity(self.ids.len()); 3];
        for &id in &self.ids {
            let rgb = PALETTE.get(id as usize).copied().unwrap_or([0, 0, 0]);
            for c in 0..3 {
                planes[c].push(rgb[c] as f64 / 255.0);
            }
        }
        PlanarImage::new(self.width, self.height, ColorSpace::Rgb, planes).expect("sized")
    }

    pub fn to_raw_png(&self) -> RawPng {
        RawPng {
            width: self.width,
            height: self.height,
            channels: 1,
            depth: PngDepth::Eight,
            samples: self.ids.iter().map(|&v| v as u16).collect(),
        }
    }
}

/// Reads an 8-bit single-channel label raster.
pub fn load_label_png(path: &Path, space: LabelSpace) -> Result<LabelMap> {
    let raw = read_raw_png(path)?;
    if raw.channels != 1 || raw.depth != PngDepth::Eight {
        return Err(Error::Parameter(format!(
            "{}: label PNG must be 8-bit single-channel",
            path.display()
        )));
    }
    let ids = raw.samples.iter().map(|&v| v as u8).collect();
    match space {
        LabelSpace::Raw => LabelMap::raw(raw.width, raw.height, ids),
        LabelSpace::Train => LabelMap::new(raw.width, raw.height, ids),
    }
}

/// Raw label id to training id lookup. Ids without an entry map to [`IGNORE`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTable {
    pub version: u32,
    map: [Option<u8>; 256],
}

impl LabelTable {
    pub fn cityscapes() -> Self {
        Self::parse(CITYSCAPES_TABLE).expect("bundled label table parses")
    }

    pub fn identity(classes: usize) -> Self {
        let mut map = [None; 256];
        for (id, slot) in map.iter_mut().enumerate().take(classes) {
            *slot = Some(id as u8);
        }
        Self { version: 1, map }
    }

    /// Parses `labelId trainId [name...]` lines; `#` starts a comment and a
    /// `version N` token in a comment sets the version.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = [None; 256];
        let mut version = 1;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let mut words = comment.split(|c: char| c.is_whitespace() || c == ',');
                while let Some(w) = words.next() {
                    if w == "version" {
                        if let Some(v) = words.next().and_then(|v| v.parse().ok()) {
                            version = v;
                        }
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config(format!("label table line {}: `{line}`", lineno + 1));
            let mut cols = line.split_whitespace();
            let raw: u8 = cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let train: u8 = cols.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if train != IGNORE && train as usize >= NUM_CLASSES {
                return Err(bad());
            }
            if map[raw as usize].replace(train).is_some() {
                return Err(Error::Config(format!("label table repeats id {raw}")));
            }
        }
        Ok(Self { version, map })
    }

    pub fn lookup(&self, raw: u8) -> u8 {
        self.map[raw as usize].unwrap_or(IGNORE)
    }
}

/// Maps raw ids to training ids. Maps already in training space are
/// returned unchanged, so remapping twice equals remapping once.
pub fn remap_labels(raw: &LabelMap, table: &LabelTable) -> LabelMap {
    match raw.space {
        LabelSpace::Train => raw.clone(),
        LabelSpace::Raw => LabelMap {
            ids: raw.ids.iter().map(|&v| table.lookup(v)).collect(),
            space: LabelSpace::Train,
            ..raw.clone()
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table() {
        let t = LabelTable::cityscapes();
        assert_eq!(t.version, 1);
        assert_eq!(t.lookup(7), 0);
        assert_eq!(t.lookup(0), IGNORE);
        assert_eq!(t.lookup(33), 18);
        assert_eq!(t.lookup(200), IGNORE);
        let mapped: Vec<u8> = (0..=33).map(|i| t.lookup(i)).filter(|&v| v != IGNORE).collect();
        assert_eq!(mapped, (0..19).collect::<Vec<u8>>());
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(LabelTable::parse("7 zero road").is_err());
        assert!(LabelTable::parse("7 40 road").is_err());
        assert!(LabelTable::parse("7 0\n7 1").is_err());
    }
}
