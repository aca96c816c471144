//! The network topology, written once against [`Net`] so the same walk
//! declares parameters ([`Planner`]) and executes them ([`Runner`]).

use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::{Conv2dParams, ConvTransposeParams, NormMode, Real, Rng, Tape, Var};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Kaiming-uniform with the given fan-in.
    Kaiming(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Feature-map handles produced by one walk of the network.
#[derive(Clone, Debug)]
pub struct Outputs<F> {
    pub logits: F,
    /// Final fused encoder map, width `widths[2]` at `1/8` resolution.
    pub bottleneck: F,
    /// `(width, fused map)` for each encoder stage, shallowest first.
    pub fused: Vec<(usize, F)>,
    /// `(width, decoder concat)` for each skip, deepest first.
    pub skip_concats: Vec<(usize, F)>,
}

pub(crate) trait Net {
    type F: Copy;

    fn channels(&self, x: Self::F) -> usize;
    fn conv(&mut self, name: &str, x: Self::F, cout: usize, k: (usize, usize), p: Conv2dParams, zero: bool) -> Result<Self::F>;
    fn conv_t(&mut self, name: &str, x: Self::F, cout: usize, k: usize, p: ConvTransposeParams, zero: bool) -> Result<Self::F>;
    fn bn(&mut self, name: &str, x: Self::F) -> Result<Self::F>;
    fn relu(&mut self, x: Self::F) -> Self::F;
    fn max_pool(&mut self, x: Self::F) -> Result<Self::F>;
    fn avg_pool(&mut self, x: Self::F) -> Result<Self::F>;
    fn concat(&mut self, parts: &[Self::F]) -> Result<Self::F>;
    fn add(&mut self, a: Self::F, b: Self::F) -> Result<Self::F>;
    fn dropout(&mut self, x: Self::F, p: f64) -> Result<Self::F>;
}

fn downsampler<N: Net>(n: &mut N, name: &str, x: N::F, cout: usize) -> Result<N::F> {
    let cin = n.channels(x);
    let conv = n.conv(&format!("{name}.conv"), x, cout - cin, (3, 3), Conv2dParams::square(2, 1, 1), false)?;
    let pool = n.max_pool(x)?;
    let y = n.concat(&[conv, pool])?;
    let y = n.bn(&format!("{name}.bn"), y)?;
    Ok(n.relu(y))
}

/// Factorised residual block: 3x1, 1x3, bn, relu, dilated 3x1, 1x3, bn,
/// dropout, add input, relu.
fn non_bottleneck_1d<N: Net>(n: &mut N, name: &str, x: N::F, dilation: usize, dropout: f64, zero_last: bool) -> Result<N::F> {
    let c = n.channels(x);
    let d = dilation;
    let vert = |pad, dil| Conv2dParams {
        stride: (1, 1),
        padding: (pad, 0),
        dilation: (dil, 1),
    };
    let horiz = |pad, dil| Conv2dParams {
        stride: (1, 1),
        padding: (0, pad),
        dilation: (1, dil),
    };
    let y = n.conv(&format!("{name}.conv3x1_1"), x, c, (3, 1), vert(1, 1), false)?;
    let y = n.relu(y);
    let y = n.conv(&format!("{name}.conv1x3_1"), y, c, (1, 3), horiz(1, 1), false)?;
    let y = n.bn(&format!("{name}.bn1"), y)?;
    let y = n.relu(y);
    let y = n.conv(&format!("{name}.conv3x1_2"), y, c, (3, 1), vert(d, d), false)?;
    let y = n.relu(y);
    let y = n.conv(&format!("{name}.conv1x3_2"), y, c, (1, 3), horiz(d, d), zero_last)?;
    let y = n.bn(&format!("{name}.bn2"), y)?;
    let y = if dropout > 0.0 { n.dropout(y, dropout)? } else { y };
    let y = n.add(y, x)?;
    Ok(n.relu(y))
}

fn dense_block<N: Net>(n: &mut N, name: &str, mut x: N::F, modules: usize, growth: usize) -> Result<N::F> {
    for m in 0..modules {
        let y = n.bn(&format!("{name}.m{m}.bn"), x)?;
        let y = n.relu(y);
        let y = n.conv(&format!("{name}.m{m}.conv"), y, growth, (3, 3), Conv2dParams::square(1, 1, 1), false)?;
        x = n.concat(&[x, y])?;
    }
    Ok(x)
}

fn transition<N: Net>(n: &mut N, name: &str, x: N::F, cout: usize, pool: bool) -> Result<N::F> {
    let y = n.bn(&format!("{name}.bn"), x)?;
    let y = n.relu(y);
    let y = n.conv(&format!("{name}.conv"), y, cout, (1, 1), Conv2dParams::default(), false)?;
    if pool {
        n.avg_pool(y)
    } else {
        Ok(y)
    }
}

fn up_stage<N: Net>(n: &mut N, spec: &NetworkSpec, name: &str, x: N::F, skip: N::F, cout: usize) -> Result<(N::F, N::F)> {
    let up_params = ConvTransposeParams {
        stride: 2,
        padding: 1,
        output_padding: 1,
    };
    let y = n.conv_t(&format!("{name}.up"), x, cout, 3, up_params, false)?;
    let y = n.bn(&format!("{name}.bn"), y)?;
    let y = n.relu(y);
    let cat = n.concat(&[y, skip])?;
    let mut y = n.conv(&format!("{name}.project"), cat, cout, (1, 1), Conv2dParams::default(), false)?;
    for b in 0..spec.decoder_blocks {
        y = non_bottleneck_1d(n, &format!("{name}.nb{b}"), y, 1, 0.0, spec.zero_init_residual)?;
    }
    Ok((y, cat))
}

fn fuse<N: Net>(n: &mut N, rgb: N::F, dl: Option<N::F>) -> Result<N::F> {
    match dl {
        Some(d) => n.add(rgb, d),
        None => Ok(rgb),
    }
}

pub(crate) fn network<N: Net>(n: &mut N, spec: &NetworkSpec, rgb: N::F, aux: Option<N::F>) -> Result<Outputs<N::F>> {
    let [w0, w1, w2] = spec.widths;
    let zr = spec.zero_init_residual;

    let dl1 = aux.map(|a| downsampler(n, "dl.ds1", a, w0)).transpose()?;
    let r = downsampler(n, "rgb.ds1", rgb, w0)?;
    let f16 = fuse(n, r, dl1)?;

    let mut r = downsampler(n, "rgb.ds2", f16, w1)?;
    for b in 0..spec.nb_blocks {
        r = non_bottleneck_1d(n, &format!("rgb.nb{b}"), r, 1, 0.0, zr)?;
    }
    let dl2 = dl1
        .map(|d| {
            let d = dense_block(n, "dl.dense1", d, spec.dense_modules[0], spec.growth)?;
            transition(n, "dl.trans1", d, w1, true)
        })
        .transpose()?;
    let f64_ = fuse(n, r, dl2)?;

    let mut r = downsampler(n, "rgb.ds3", f64_, w2)?;
    for (b, &d) in spec.dilations.iter().enumerate() {
        r = non_bottleneck_1d(n, &format!("rgb.dil{b}"), r, d, spec.dropout, zr)?;
    }
    let dl3 = dl2
        .map(|d| {
            let d = dense_block(n, "dl.dense2", d, spec.dense_modules[1], spec.growth)?;
            let d = transition(n, "dl.trans2", d, w2, true)?;
            let d = dense_block(n, "dl.dense3", d, spec.dense_modules[2], spec.growth)?;
            transition(n, "dl.trans3", d, w2, false)
        })
        .transpose()?;
    let f128 = fuse(n, r, dl3)?;

    let (y, cat64) = up_stage(n, spec, "dec.up1", f128, f64_, w1)?;
    let (y, cat16) = up_stage(n, spec, "dec.up2", y, f16, w0)?;
    let head_params = ConvTransposeParams {
        stride: 2,
        padding: 0,
        output_padding: 0,
    };
    let logits = n.conv_t("dec.head", y, spec.classes, 2, head_params, spec.zero_init_head)?;

    Ok(Outputs {
        logits,
        bottleneck: f128,
        fused: vec![(w0, f16), (w1, f64_), (w2, f128)],
        skip_concats: vec![(w1, cat64), (w0, cat16)],
    })
}

/// Shape-only walk that records parameter declarations.
#[derive(Default)]
pub(crate) struct Planner {
    pub params: Vec<ParamDecl>,
    pub norms: Vec<(String, usize)>,
}

impl Planner {
    fn declare(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.params.push(ParamDecl { name, shape, init });
    }
}

impl Net for Planner {
    type F = usize;

    fn channels(&self, x: usize) -> usize {
        x
    }

    fn conv(&mut self, name: &str, x: usize, cout: usize, (kh, kw): (usize, usize), _: Conv2dParams, zero: bool) -> Result<usize> {
        let w_init = if zero { Init::Zeros } else { Init::Kaiming(x * kh * kw) };
        self.declare(format!("{name}.weight"), vec![cout, x, kh, kw], w_init);
        self.declare(format!("{name}.bias"), vec![cout], Init::Zeros);
        Ok(cout)
    }

    fn conv_t(&mut self, name: &str, x: usize, cout: usize, k: usize, _: ConvTransposeParams, zero: bool) -> Result<usize> {
        let w_init = if zero { Init::Zeros } else { Init::Kaiming(x * k * k) };
        self.declare(format!("{name}.weight"), vec![x, cout, k, k], w_init);
        self.declare(format!("{name}.bias"), vec![cout], Init::Zeros);
        Ok(cout)
    }

    fn bn(&mut self, name: &str, x: usize) -> Result<usize> {
        self.declare(format!("{name}.gamma"), vec![x], Init::Ones);
        self.declare(format!("{name}.beta"), vec![x], Init::Zeros);
        self.norms.push((name.to_string(), x));
        Ok(x)
    }

    fn relu(&mut self, x: usize) -> usize {
        x
    }

    fn max_pool(&mut self, x: usize) -> Result<usize> {
        Ok(x)
    }

    fn avg_pool(&mut self, x: usize) -> Result<usize> {
        Ok(x)
    }

    fn concat(&mut self, parts: &[usize]) -> Result<usize> {
        Ok(parts.iter().sum())
    }

    fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        if a != b {
            return Err(Error::Construction {
                layer: "fusion".into(),
                reason: format!("cannot sum {a} and {b} channels"),
            });
        }
        Ok(a)
    }

    fn dropout(&mut self, x: usize, _: f64) -> Result<usize> {
        Ok(x)
    }
}

/// Tape-recording walk over bound parameters.
pub(crate) struct Runner<'a, T: Real> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a BTreeMap<String, crate::tensor::Tensor<T>>,
    pub norms: &'a mut BTreeMap<String, crate::tensor::BatchNormStats<T>>,
    pub mode: NormMode,
    pub rng: &'a mut Rng,
    pub param_grad: bool,
    pub bound: BTreeMap<String, Var>,
}

impl<T: Real> Runner<'_, T> {
    fn param(&mut self, name: String, shape: &[usize]) -> Result<Var> {
        if let Some(&v) = self.bound.get(&name) {
            return Ok(v);
        }
        let t = self.params.get(&name).ok_or_else(|| Error::CheckpointMismatch {
            layer: name.clone(),
            reason: "parameter missing".into(),
        })?;
        if t.shape() != shape {
            return Err(Error::CheckpointMismatch {
                layer: name,
                reason: format!("shape {:?}, expected {shape:?}", t.shape()),
            });
        }
        let v = self.tape.leaf(t.clone(), self.param_grad);
        self.bound.insert(name, v);
        Ok(v)
    }
}

impl<T: Real> Net for Runner<'_, T> {
    type F = Var;

    fn channels(&self, x: Var) -> usize {
        self.tape.shape(x)[1]
    }

    fn conv(&mut self, name: &str, x: Var, cout: usize, (kh, kw): (usize, usize), p: Conv2dParams, _: bool) -> Result<Var> {
        let cin = self.channels(x);
        let w = self.param(format!("{name}.weight"), &[cout, cin, kh, kw])?;
        let b = self.param(format!("{name}.bias"), &[cout])?;
        self.tape.conv2d(x, w, Some(b), &p)
    }

    fn conv_t(&mut self, name: &str, x: Var, cout: usize, k: usize, p: ConvTransposeParams, _: bool) -> Result<Var> {
        let cin = self.channels(x);
        let w = self.param(format!("{name}.weight"), &[cin, cout, k, k])?;
        let b = self.param(format!("{name}.bias"), &[cout])?;
        self.tape.conv_transpose2d(x, w, Some(b), &p)
    }

    fn bn(&mut self, name: &str, x: Var) -> Result<Var> {
        let c = self.channels(x);
        let g = self.param(format!("{name}.gamma"), &[c])?;
        let b = self.param(format!("{name}.beta"), &[c])?;
        let stats = self.norms.get_mut(name).ok_or_else(|| Error::CheckpointMismatch {
            layer: name.to_string(),
            reason: "batch-norm statistics missing".into(),
        })?;
        self.tape.batch_norm2d(x, g, b, stats, self.mode)
    }

    fn relu(&mut self, x: Var) -> Var {
        self.tape.relu(x)
    }

    fn max_pool(&mut self, x: Var) -> Result<Var> {
        self.tape.max_pool2d(x, 2, 2)
    }

    fn avg_pool(&mut self, x: Var) -> Result<Var> {
        self.tape.avg_pool2d(x, 2, 2)
    }

    fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.tape.concat_channels(parts)
    }

    fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.tape.add(a, b)
    }

    fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        match self.mode {
            NormMode::Train => self.tape.dropout(x, p, self.rng),
            NormMode::Eval => Ok(x),
        }
    }
}
