use crate::error::{Error, Result};

/// Architecture of the dual-encoder segmentation network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub rgb_channels: usize,
    /// 2 for depth + luminance, 1 for luminance, 0 for the RGB-only variant.
    pub aux_channels: usize,
    /// Encoder stage widths; the decoder mirrors the first two.
    pub widths: [usize; 3],
    /// Plain non-bottleneck-1D blocks after the second downsampler.
    pub nb_blocks: usize,
    /// One dilated non-bottleneck-1D block per entry.
    pub dilations: Vec<usize>,
    /// Modules in each of the three dense blocks.
    pub dense_modules: [usize; 3],
    pub growth: usize,
    /// Non-bottleneck-1D blocks after each decoder upsampling.
    pub decoder_blocks: usize,
    pub classes: usize,
    /// Dropout inside the dilated blocks, training only.
    pub dropout: f64,
    /// Zero the last convolution of every residual block.
    pub zero_init_residual: bool,
    /// Zero the output layer, making initial logits all zero.
    pub zero_init_head: bool,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            rgb_channels: 3,
            aux_channels: 2,
            widths: [16, 64, 128],
            nb_blocks: 5,
            dilations: vec![2, 4, 8, 16, 2, 4, 8, 16],
            dense_modules: [4, 3, 4],
            growth: 16,
            decoder_blocks: 2,
            classes: 19,
            dropout: 0.3,
            zero_init_residual: false,
            zero_init_head: false,
        }
    }
}

fn bad(layer: &str, reason: impl Into<String>) -> Error {
    Error::Construction {
        layer: layer.into(),
        reason: reason.into(),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: `{v}` is not a non-negative integer")))
        })
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let [w0, w1, w2] = self.widths;
        if !(w0 < w1 && w1 < w2) {
            return Err(bad("encoder", format!("stage widths {:?} must strictly increase", self.widths)));
        }
        if self.rgb_channels == 0 || w0 <= self.rgb_channels {
            return Err(bad("rgb.ds1", format!("width {w0} must exceed {} input channels", self.rgb_channels)));
        }
        if self.aux_channels > 2 {
            return Err(bad("dl.ds1", format!("{} auxiliary channels; expected 0, 1 or 2", self.aux_channels)));
        }
        if self.aux_channels > 0 && w0 <= self.aux_channels {
            return Err(bad("dl.ds1", "first width must exceed the auxiliary channels"));
        }
        if 2 * w1 < w2 {
            return Err(bad("rgb.ds3", format!("width {w2} exceeds twice {w1}; the pooled branch would not fit")));
        }
        if self.dense_modules != [4, 3, 4] {
            return Err(bad("dl", format!("dense blocks must hold (4, 3, 4) modules, got {:?}", self.dense_modules)));
        }
        if self.growth == 0 {
            return Err(bad("dl.dense1", "growth rate must be positive"));
        }
        if self.dilations.contains(&0) {
            return Err(bad("rgb.dil", "dilations must be positive"));
        }
        if self.classes != 19 {
            return Err(bad("head", format!("output stage must have 19 classes, got {}", self.classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad("rgb.dil", format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Applies one `model.*` configuration key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.widths" => {
                let v = parse_list(key, value)?;
                self.widths = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three widths")))?;
            }
            "model.nb_blocks" => self.nb_blocks = parse(key, value)?,
            "model.dilations" => self.dilations = parse_list(key, value)?,
            "model.dense_modules" => {
                let v = parse_list(key, value)?;
                self.dense_modules = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three counts")))?;
            }
            "model.growth" => self.growth = parse(key, value)?,
            "model.decoder_blocks" => self.decoder_blocks = parse(key, value)?,
            "model.classes" => self.classes = parse(key, value)?,
            "model.dropout" => self.dropout = parse(key, value)?,
            "model.zero_init_residual" => self.zero_init_residual = parse(key, value)?,
            "model.zero_init_head" => self.zero_init_head = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// `model.*` key/value pairs accepted by [`NetworkSpec::set`].
    pub fn entries(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        vec![
            ("model.widths".into(), join(&self.widths)),
            ("model.nb_blocks".into(), self.nb_blocks.to_string()),
            ("model.dilations".into(), join(&self.dilations)),
            ("model.dense_modules".into(), join(&self.dense_modules)),
            ("model.growth".into(), self.growth.to_string()),
            ("model.decoder_blocks".into(), self.decoder_blocks.to_string()),
            ("model.classes".into(), self.classes.to_string()),
            ("model.dropout".into(), self.dropout.to_string()),
            ("model.zero_init_residual".into(), self.zero_init_residual.to_string()),
            ("model.zero_init_head".into(), self.zero_init_head.to_string()),
        ]
    }
}
