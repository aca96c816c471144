use super::labels::{IGNORE, LabelMap};
use super::scan::SceneSample;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::imaging::{
    compose_iab, compose_ihs, illumination_invariant, luminance, DepthMap, LuminanceWeights, PlanarImage,
    DEFAULT_ALPHA,
};
use crate::tensor::Tensor;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Default depth, in meters, that maps to 1.0 in the depth plane.
pub const DEFAULT_MAX_DEPTH_M: f64 = 300.0;

/// Standard deviations below this are replaced by 1 when normalising.
const MIN_STD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputMode {
    #[default]
    Rgb,
    Iit,
    Iab,
    Ihs,
    /// RGB after a learned foggy-to-clear translation.
    Gcs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AuxMode {
    /// Depth and luminance, in that order.
    #[default]
    Dl,
    /// Luminance only.
    L,
    None,
}

impl AuxMode {
    pub fn channels(self) -> usize {
        match self {
            AuxMode::Dl => 2,
            AuxMode::L => 1,
            AuxMode::None => 0,
        }
    }
}

macro_rules! text_enum {
    ($ty:ty, $key:literal, $($name:literal => $v:expr),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(Error::Config(format!(
                        concat!($key, " must be one of ", $($name, " "),+, "(got `{}`)"),
                        other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $v { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

text_enum!(InputMode, "data.input_mode", "rgb" => InputMode::Rgb, "iit" => InputMode::Iit,
    "iab" => InputMode::Iab, "ihs" => InputMode::Ihs, "gcs" => InputMode::Gcs);
text_enum!(AuxMode, "data.aux_mode", "dl" => AuxMode::Dl, "l" => AuxMode::L, "none" => AuxMode::None);

/// Foggy-to-clear image mapping used by [`InputMode::Gcs`].
pub trait Translator {
    fn translate_image(&self, img: &PlanarImage) -> Result<PlanarImage>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneStats {
    pub mean: f64,
    pub std: f64,
}

impl PlaneStats {
    pub const IDENTITY: PlaneStats = PlaneStats { mean: 0.0, std: 1.0 };
}

/// Per-plane normalisation statistics for one (dataset, input mode) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub input_mode: InputMode,
    pub aux_mode: AuxMode,
    pub input: Vec<PlaneStats>,
    pub aux: Vec<PlaneStats>,
}

impl NormStats {
    pub fn identity(input_mode: InputMode, aux_mode: AuxMode) -> Self {
        Self {
            input_mode,
            aux_mode,
            input: vec![PlaneStats::IDENTITY; 3],
            aux: vec![PlaneStats::IDENTITY; aux_mode.channels()],
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# fogsight normalisation v1\ninput_mode {}\naux_mode {}\n",
            self.input_mode, self.aux_mode
        );
        for (group, planes) in [("input", &self.input), ("aux", &self.aux)] {
            for (i, p) in planes.iter().enumerate() {
                // {:e} round-trips f64 exactly
                s += &format!("{group} {i} {:e} {:e}\n", p.mean, p.std);
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: &str| Error::Config(format!("normalisation sidecar line `{line}`"));
        let (mut input_mode, mut aux_mode) = (None, None);
        let (mut input, mut aux) = (Vec::new(), Vec::new());
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            match cols.as_slice() {
                ["input_mode", m] => input_mode = Some(m.parse::<InputMode>()?),
                ["aux_mode", m] => aux_mode = Some(m.parse::<AuxMode>()?),
                [group @ ("input" | "aux"), i, mean, std] => {
                    let target = if *group == "input" { &mut input } else { &mut aux };
                    if i.parse::<usize>().ok() != Some(target.len()) {
                        return Err(bad(line));
                    }
                    let mean = mean.parse().map_err(|_| bad(line))?;
                    let std = std.parse().map_err(|_| bad(line))?;
                    target.push(PlaneStats { mean, std });
                }
                _ => return Err(bad(line)),
            }
        }
        let (Some(input_mode), Some(aux_mode)) = (input_mode, aux_mode) else {
            return Err(Error::Config("normalisation sidecar lacks its mode lines".into()));
        };
        if input.len() != 3 || aux.len() != aux_mode.channels() {
            return Err(Error::Config("normalisation sidecar has the wrong plane count".into()));
        }
        Ok(Self {
            input_mode,
            aux_mode,
            input,
            aux,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Flattened `[mean, std]` pairs, inputs first, for checkpoint storage.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data: Vec<f32> = self
            .input
            .iter()
            .chain(&self.aux)
            .flat_map(|p| [p.mean as f32, p.std as f32])
            .collect();
        Tensor::new(vec![data.len() / 2, 2], data).expect("nonempty")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelTensor {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub ids: Vec<u8>,
}

impl LabelTensor {
    pub fn shape(&self) -> [usize; 3] {
        [self.n, self.height, self.width]
    }

    /// The `i`th label map of the batch.
    pub fn map(&self, i: usize) -> LabelMap {
        let hw = self.height * self.width;
        LabelMap::new(self.width, self.height, self.ids[i * hw..(i + 1) * hw].to_vec()).expect("train ids")
    }
}

#[derive(Debug)]
pub struct Batch {
    /// `[N, 3, H, W]`.
    pub input: Tensor<f32>,
    /// `[N, 2, H, W]` (depth, luminance) or `[N, 1, H, W]` (luminance).
    pub aux: Option<Tensor<f32>>,
    pub labels: LabelTensor,
    pub ids: Vec<String>,
}

#[derive(Clone, Copy)]
pub struct BatchOptions<'a> {
    pub input_mode: InputMode,
    pub aux_mode: AuxMode,
    /// `(height, width)`.
    pub size: (usize, usize),
    pub alpha: f64,
    pub luminance: LuminanceWeights,
    pub max_depth_m: f64,
    pub norm: Option<&'a NormStats>,
    pub translator: Option<&'a dyn Translator>,
}

impl<'a> BatchOptions<'a> {
    pub fn new(input_mode: InputMode, aux_mode: AuxMode, size: (usize, usize)) -> Self {
        Self {
            input_mode,
            aux_mode,
            size,
            alpha: DEFAULT_ALPHA,
            luminance: LuminanceWeights::default(),
            max_depth_m: DEFAULT_MAX_DEPTH_M,
            norm: None,
            translator: None,
        }
    }
}

/// Bilinear resampling with half-pixel centres; identity at equal size.
pub fn resize_bilinear(plane: &[f64], (w, h): (usize, usize), (ow, oh): (usize, usize)) -> Vec<f64> {
    if (w, h) == (ow, oh) {
        return plane.to_vec();
    }
    let axis = |o: usize, n: usize, on: usize| {
        let s = ((o as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n - 1), s - i0 as f64)
    };
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        let (y0, y1, fy) = axis(oy, h, oh);
        for ox in 0..ow {
            let (x0, x1, fx) = axis(ox, w, ow);
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Nearest-neighbour resampling sampling the source pixel under each output centre.
pub fn resize_nearest<T: Copy>(plane: &[T], (w, h): (usize, usize), (ow, oh): (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        let sy = ((2 * oy + 1) * h / (2 * oh)).min(h - 1);
        for ox in 0..ow {
            let sx = ((2 * ox + 1) * w / (2 * ow)).min(w - 1);
            out.push(plane[sy * w + sx]);
        }
    }
    out
}

pub fn resize_image(img: &PlanarImage, (ow, oh): (usize, usize)) -> Result<PlanarImage> {
    let src = (img.width(), img.height());
    let planes = img.planes().iter().map(|p| resize_bilinear(p, src, (ow, oh))).collect();
    PlanarImage::new(ow, oh, img.colorspace(), planes)
}

/// Depth plane scaled by `max_m` into `[0, 1]`; invalid pixels take the
/// largest valid depth, or 1 when nothing is valid.
fn depth_plane(d: &DepthMap, max_m: f64, (ow, oh): (usize, usize)) -> Vec<f64> {
    let fill = d.max_valid().map_or(1.0, |m| (m / max_m).clamp(0.0, 1.0));
    let scaled: Vec<f64> = (0..d.depth.len())
        .map(|i| if d.is_valid(i) { (d.depth[i] / max_m).clamp(0.0, 1.0) } else { fill })
        .collect();
    resize_nearest(&scaled, (d.width, d.height), (ow, oh))
}

struct SamplePlanes {
    input: Vec<Vec<f64>>,
    aux: Vec<Vec<f64>>,
    label: Vec<u8>,
}

fn sample_planes(s: &SceneSample, opts: &BatchOptions) -> Result<SamplePlanes> {
    s.validate()?;
    let (oh, ow) = opts.size;
    let rgb = resize_image(&s.rgb, (ow, oh))?;
    let input = match opts.input_mode {
        InputMode::Rgb => rgb.planes().to_vec(),
        InputMode::Iit => {
            let p = illumination_invariant(&rgb, opts.alpha)?.into_planes().remove(0);
            vec![p.clone(), p.clone(), p]
        }
        InputMode::Iab => compose_iab(&rgb, opts.alpha)?.into_planes(),
        InputMode::Ihs => compose_ihs(&rgb, opts.alpha)?.into_planes(),
        InputMode::Gcs => {
            let t = opts.translator.ok_or_else(|| {
                Error::Config("input mode gcs needs a trained generator (gan.ckpt)".into())
            })?;
            t.translate_image(&rgb)?.into_planes()
        }
    };
    let lum = || luminance(&rgb, opts.luminance).map(|l| l.into_planes().remove(0));
    let aux = match opts.aux_mode {
        AuxMode::None => Vec::new(),
        AuxMode::L => vec![lum()?],
        AuxMode::Dl => {
            let d = s.depth.as_ref().ok_or_else(|| {
                Error::Config(format!("sample `{}` has no depth but aux mode is dl", s.id))
            })?;
            vec![depth_plane(d, opts.max_depth_m, (ow, oh)), lum()?]
        }
    };
    let label = match &s.label {
        Some(l) => resize_nearest(&l.ids, (l.width, l.height), (ow, oh)),
        None => vec![IGNORE; ow * oh],
    };
    Ok(SamplePlanes { input, aux, label })
}

fn validate_opts(opts: &BatchOptions) -> Result<()> {
    let (h, w) = opts.size;
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("data.size {h}x{w} is empty")));
    }
    if opts.max_depth_m.is_nan() || opts.max_depth_m <= 0.0 {
        return Err(Error::Config(format!("depth.max_m {} must be positive", opts.max_depth_m)));
    }
    if let Some(n) = opts.norm {
        if n.input_mode != opts.input_mode || n.aux_mode != opts.aux_mode {
            return Err(Error::Config(format!(
                "normalisation stats are for {}/{}, batch is {}/{}",
                n.input_mode, n.aux_mode, opts.input_mode, opts.aux_mode
            )));
        }
    }
    Ok(())
}

/// Transforms, resizes, normalises and stacks `samples` in order.
pub fn make_batch(samples: &[SceneSample], opts: &BatchOptions) -> Result<Batch> {
    validate_opts(opts)?;
    if samples.is_empty() {
        return Err(Error::Usage("cannot build an empty batch".into()));
    }
    let (h, w) = opts.size;
    let n = samples.len();
    let ac = opts.aux_mode.channels();
    let mut input = Vec::with_capacity(n * 3 * h * w);
    let mut aux = Vec::with_capacity(n * ac * h * w);
    let mut labels = Vec::with_capacity(n * h * w);
    let identity = NormStats::identity(opts.input_mode, opts.aux_mode);
    let norm = opts.norm.unwrap_or(&identity);
    for s in samples {
        let p = sample_planes(s, opts)?;
        for (plane, st) in p.input.iter().zip(&norm.input) {
            input.extend(plane.iter().map(|&v| ((v - st.mean) / st.std) as f32));
        }
        for (plane, st) in p.aux.iter().zip(&norm.aux) {
            aux.extend(plane.iter().map(|&v| ((v - st.mean) / st.std) as f32));
        }
        labels.extend(p.label);
    }
    Ok(Batch {
        input: Tensor::new(vec![n, 3, h, w], input)?,
        aux: if ac > 0 { Some(Tensor::new(vec![n, ac, h, w], aux)?) } else { None },
        labels: LabelTensor {
            n,
            height: h,
            width: w,
            ids: labels,
        },
        ids: samples.iter().map(|s| s.id.clone()).collect(),
    })
}

/// Mean and standard deviation of every input and auxiliary plane over
/// `samples` after transformation, accumulated in sample order.
pub fn compute_norm_stats(samples: &[SceneSample], opts: &BatchOptions) -> Result<NormStats> {
    let opts = BatchOptions { norm: None, ..*opts };
    validate_opts(&opts)?;
    if samples.is_empty() {
        return Err(Error::Usage("normalisation stats need at least one sample".into()));
    }
    let ac = opts.aux_mode.channels();
    let mut acc = vec![(0.0f64, 0.0f64, 0u64); 3 + ac];
    for s in samples {
        let p = sample_planes(s, &opts)?;
        for (slot, plane) in acc.iter_mut().zip(p.input.iter().chain(&p.aux)) {
            for &v in plane {
                slot.0 += v;
                slot.1 += v * v;
                slot.2 += 1;
            }
        }
    }
    let stats: Vec<PlaneStats> = acc
        .into_iter()
        .map(|(s, sq, n)| {
            let mean = s / n as f64;
            let std = (sq / n as f64 - mean * mean).max(0.0).sqrt();
            PlaneStats {
                mean,
                std: if std < MIN_STD { 1.0 } else { std },
            }
        })
        .collect();
    Ok(NormStats {
        input_mode: opts.input_mode,
        aux_mode: opts.aux_mode,
        input: stats[..3].to_vec(),
        aux: stats[3..].to_vec(),
    })
}
