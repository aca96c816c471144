use super::labels::{load_label_png, remap_labels, LabelMap, LabelSpace, LabelTable};
use crate::error::{Error, Result};
use crate::imaging::{flip_horizontal, load_depth_png, load_png, ColorSpace, DepthDecode, DepthMap, PlanarImage};
use crate::imaging::flip_rows;
use rand::Rng as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Layout {
    /// `leftImg8bit/<split>/<city>/<stem>_leftImg8bit*.png`, with
    /// `gtFine/.../<stem>_gtFine_labelIds.png` and `disparity/.../<stem>_disparity.png`.
    #[default]
    Cityscapes,
    /// `img/<stem>.png`, `depth/<stem>.png`, `label/<stem>.png`; labels hold training ids.
    Flat,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cityscapes" => Ok(Layout::Cityscapes),
            "flat" => Ok(Layout::Flat),
            other => Err(Error::Config(format!(
                "data.layout must be cityscapes or flat, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Cityscapes => "cityscapes",
            Layout::Flat => "flat",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOptions {
    pub layout: Layout,
    /// Cityscapes split directory (`train`, `val`, ...); `None` scans all splits.
    pub split: Option<String>,
    /// Cityscapes image directory, e.g. `leftImg8bit_foggy`.
    pub image_dir: String,
    pub labeled: bool,
}

impl ScanOptions {
    pub fn new(layout: Layout, labeled: bool) -> Self {
        Self {
            layout,
            split: None,
            image_dir: "leftImg8bit".into(),
            labeled,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleDescriptor {
    pub id: String,
    pub image: PathBuf,
    pub depth: Option<PathBuf>,
    pub label: Option<PathBuf>,
    pub label_space: LabelSpace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub id: String,
    pub rgb: PlanarImage,
    pub depth: Option<DepthMap>,
    pub label: Option<LabelMap>,
}

impl SceneSample {
    pub fn new(id: impl Into<String>, rgb: PlanarImage, depth: Option<DepthMap>, label: Option<LabelMap>) -> Result<Self> {
        let s = Self {
            id: id.into(),
            rgb,
            depth,
            label,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rgb.colorspace() != ColorSpace::Rgb {
            return Err(Error::Parameter(format!("sample `{}` is not RGB", self.id)));
        }
        let (w, h) = (self.rgb.width(), self.rgb.height());
        let depth_dims = self.depth.as_ref().map(|d| (d.width, d.height));
        let label_dims = self.label.as_ref().map(|l| (l.width, l.height));
        for (what, dims) in [("depth", depth_dims), ("label", label_dims)] {
            if let Some((dw, dh)) = dims {
                if (dw, dh) != (w, h) {
                    return Err(Error::dim(format!(
                        "sample `{}`: {what} is {dw}x{dh}, image is {w}x{h}",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                out.push(path);
            }
        }
    }
    Ok(out)
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    p.is_file().then_some(p)
}

/// Lists samples under `root`, sorted by id. Depth is optional; a missing
/// label is an error only when `labeled` is set.
pub fn scan_dataset(root: &Path, opts: &ScanOptions) -> Result<Vec<SampleDescriptor>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root not found"),
        ));
    }
    let mut out = match opts.layout {
        Layout::Flat => scan_flat(root, opts.labeled)?,
        Layout::Cityscapes => scan_cityscapes(root, opts)?,
    };
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn missing_label(stem: &str, expected: &Path) -> Error {
    Error::Config(format!(
        "sample `{stem}` has no label (expected {})",
        expected.display()
    ))
}

fn scan_flat(root: &Path, labeled: bool) -> Result<Vec<SampleDescriptor>> {
    let mut out = Vec::new();
    for image in png_files(&root.join("img"))? {
        let rel = image.strip_prefix(root.join("img")).expect("under img/");
        let stem = rel.with_extension("").to_string_lossy().replace('\\', "/");
        let label_path = root.join("label").join(rel);
        let label = existing(label_path.clone());
        if labeled && label.is_none() {
            return Err(missing_label(&stem, &label_path));
        }
        out.push(SampleDescriptor {
            depth: existing(root.join("depth").join(rel)),
            id: stem,
            image,
            label,
            label_space: LabelSpace::Train,
        });
    }
    Ok(out)
}

fn scan_cityscapes(root: &Path, opts: &ScanOptions) -> Result<Vec<SampleDescriptor>> {
    let split = opts.split.as_deref().unwrap_or("");
    let img_root = root.join(&opts.image_dir);
    let mut out = Vec::new();
    for image in png_files(&img_root.join(split))? {
        let name = image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let Some(cut) = name.find("_leftImg8bit") else {
            continue;
        };
        let stem = &name[..cut];
        let rel_dir = image
            .parent()
            .and_then(|p| p.strip_prefix(&img_root).ok())
            .unwrap_or(Path::new(""))
            .to_path_buf();
        let label_path = root
            .join("gtFine")
            .join(&rel_dir)
            .join(format!("{stem}_gtFine_labelIds.png"));
        let label = existing(label_path.clone());
        if opts.labeled && label.is_none() {
            return Err(missing_label(stem, &label_path));
        }
        let id = rel_dir.join(&name).to_string_lossy().replace('\\', "/");
        out.push(SampleDescriptor {
            id,
            depth: existing(root.join("disparity").join(&rel_dir).join(format!("{stem}_disparity.png"))),
            image,
            label,
            label_space: LabelSpace::Raw,
        });
    }
    Ok(out)
}

/// Reads every raster of a descriptor; raw labels are remapped through `table`.
pub fn load_sample(desc: &SampleDescriptor, decode: DepthDecode, table: &LabelTable) -> Result<SceneSample> {
    let mut rgb = load_png(&desc.image)?;
    if rgb.colorspace() == ColorSpace::Gray {
        let p = rgb.plane(0).to_vec();
        rgb = PlanarImage::new(rgb.width(), rgb.height(), ColorSpace::Rgb, vec![p.clone(), p.clone(), p])?;
    }
    let depth = desc
        .depth
        .as_deref()
        .map(|p| load_depth_png(p, decode))
        .transpose()?;
    let label = desc
        .label
        .as_deref()
        .map(|p| load_label_png(p, desc.label_space).map(|l| remap_labels(&l, table)))
        .transpose()?;
    SceneSample::new(desc.id.clone(), rgb, depth, label)
}

pub fn flip_depth(d: &DepthMap) -> DepthMap {
    DepthMap {
        depth: flip_rows(&d.depth, d.width),
        invalid: d.invalid.as_ref().map(|m| flip_rows(m, d.width)),
        ..*d
    }
}

/// Mirrors every raster of the sample about the vertical axis.
pub fn flip_sample(sample: &SceneSample) -> SceneSample {
    SceneSample {
        id: sample.id.clone(),
        rgb: flip_horizontal(&sample.rgb),
        depth: sample.depth.as_ref().map(flip_depth),
        label: sample.label.as_ref().map(LabelMap::flip_horizontal),
    }
}

/// Flips with probability one half, consuming one draw from `rng`.
pub fn augment_hflip(sample: SceneSample, rng: &mut crate::tensor::Rng) -> SceneSample {
    if rng.gen_bool(0.5) {
        flip_sample(&sample)
    } else {
        sample
    }
}
