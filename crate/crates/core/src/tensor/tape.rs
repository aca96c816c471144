use super::conv::{self, ConvShapes};
use super::norm::{self, BatchNormStats, BnSaved, NormMode};
use super::pool::{self, PoolGeom};
use super::{Conv2dParams, ConvTransposeParams, Real, Rng, Tensor};
use crate::error::{Error, Result};
use rand::Rng as _;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the weighted cross-entropy folds per-pixel terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Divide by the number of scored (non-ignored) pixels.
    #[default]
    Mean,
    Sum,
}

type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>>>;

enum Op<T> {
    Leaf,
    Conv2d(ConvShapes),
    ConvTranspose2d(ConvShapes),
    MaxPool { input_len: usize, arg: Vec<usize> },
    AvgPool(PoolGeom),
    BatchNorm { dims: [usize; 4], saved: BnSaved<T> },
    Relu,
    LeakyRelu(T),
    Sigmoid,
    Log,
    LogFloor(T),
    Softplus,
    Clamp { lo: T, hi: T },
    Affine { scale: T },
    Add,
    Sub,
    Mul,
    Concat { dims: [usize; 4], channels: Vec<usize> },
    Softmax { dims: [usize; 4] },
    Dropout { mask: Vec<T> },
    Sum,
    Mean,
    GlobalAvgPool { dims: [usize; 4] },
    Reshape,
    CrossEntropy { probs: Vec<T>, labels: Vec<u8>, weights: Vec<T>, ignore: u8, scale: T },
    Custom(CustomBackward<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d(_) => "conv2d",
            Op::ConvTranspose2d(_) => "conv_transpose2d",
            Op::MaxPool { .. } => "max_pool2d",
            Op::AvgPool(_) => "avg_pool2d",
            Op::BatchNorm { .. } => "batch_norm2d",
            Op::Relu => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::Log => "log",
            Op::LogFloor(_) => "log_floor",
            Op::Softplus => "softplus",
            Op::Clamp { .. } => "clamp",
            Op::Affine { .. } => "affine",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Concat { .. } => "concat_channels",
            Op::Softmax { .. } => "softmax_channel",
            Op::Dropout { .. } => "dropout",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Reshape => "reshape",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Custom(_) => "custom",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Operation record. Nodes are appended in forward execution order, so the
/// node index is a topological order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, contribution: &[T]) {
    match slot {
        Some(g) => {
            for (a, &b) in g.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, inputs: Vec<Var>, op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient, present once a backward pass reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    /// Every recorded variable in execution order.
    pub fn nodes(&self) -> impl Iterator<Item = Var> + '_ {
        (0..self.nodes.len()).map(Var)
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to whatever
    /// earlier backward calls left behind.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Usage("backward on an empty tape".into()));
        }
        let root = &self.nodes[loss.0];
        if !root.value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Usage(
                "loss does not depend on any tensor that requires grad".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut retained = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            retained.push((idx, g));
        }
        for (idx, g) in retained {
            accumulate(&mut self.nodes[idx].grad, &g);
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        let needs = |k: usize| self.nodes[ins[k].0].requires_grad;
        let val = |k: usize| &self.nodes[ins[k].0].value;
        let mut send = |k: usize, contribution: &[T]| {
            if self.nodes[ins[k].0].requires_grad {
                accumulate(&mut grads[ins[k].0], contribution);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d(s) => {
                let (gx, gw, gb) =
                    conv::conv2d_backward(s, val(0).data(), val(1).data(), g, needs(0), needs(1));
                if let Some(gx) = gx {
                    send(0, &gx);
                }
                if let Some(gw) = gw {
                    send(1, &gw);
                }
                if ins.len() > 2 {
                    send(2, &gb);
                }
            }
            Op::ConvTranspose2d(s) => {
                let (gx, gw, gb) = conv::conv_transpose_backward(
                    s,
                    val(0).data(),
                    val(1).data(),
                    g,
                    needs(0),
                    needs(1),
                );
                if let Some(gx) = gx {
                    send(0, &gx);
                }
                if let Some(gw) = gw {
                    send(1, &gw);
                }
                if ins.len() > 2 {
                    send(2, &gb);
                }
            }
            Op::MaxPool { input_len, arg } => {
                send(0, &pool::max_backward(*input_len, arg, g));
            }
            Op::AvgPool(geom) => send(0, &pool::avg_backward(geom, g)),
            Op::BatchNorm { dims, saved } => {
                let (gx, gg, gb) = norm::backward(*dims, saved, val(1).data(), g);
                send(0, &gx);
                send(1, &gg);
                send(2, &gb);
            }
            Op::Relu => {
                let gx: Vec<T> = val(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                send(0, &gx);
            }
            Op::LeakyRelu(slope) => {
                let gx: Vec<T> = val(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x > T::zero() { gv } else { gv * *slope })
                    .collect();
                send(0, &gx);
            }
            Op::Sigmoid => {
                let gx: Vec<T> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (T::one() - y))
                    .collect();
                send(0, &gx);
            }
            Op::Log => {
                let gx: Vec<T> = val(0).data().iter().zip(g).map(|(&x, &gv)| gv / x).collect();
                send(0, &gx);
            }
            Op::Softplus => {
                let gx: Vec<T> = val(0).data().iter().zip(g).map(|(&x, &gv)| gv * sigmoid(x)).collect();
                send(0, &gx);
            }
            Op::LogFloor(eps) => {
                let gx: Vec<T> = val(0).data().iter().zip(g).map(|(&x, &gv)| gv / if x > T::zero() { x } else { *eps }).collect();
                send(0, &gx);
            }
            Op::Clamp { lo, hi } => {
                let gx: Vec<T> = val(0)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| if x >= *lo && x <= *hi { gv } else { T::zero() })
                    .collect();
                send(0, &gx);
            }
            Op::Affine { scale } => {
                let gx: Vec<T> = g.iter().map(|&gv| gv * *scale).collect();
                send(0, &gx);
            }
            Op::Add => {
                send(0, g);
                send(1, g);
            }
            Op::Sub => {
                send(0, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                send(1, &neg);
            }
            Op::Mul => {
                if needs(0) {
                    let ga: Vec<T> = val(1).data().iter().zip(g).map(|(&b, &gv)| b * gv).collect();
                    send(0, &ga);
                }
                if needs(1) {
                    let gb: Vec<T> = val(0).data().iter().zip(g).map(|(&a, &gv)| a * gv).collect();
                    send(1, &gb);
                }
            }
            Op::Concat { dims, channels } => {
                let [n, _, h, w] = *dims;
                let hw = h * w;
                let total: usize = channels.iter().sum();
                let mut offset = 0;
                for (k, &ch) in channels.iter().enumerate() {
                    if needs(k) {
                        let mut part = Vec::with_capacity(n * ch * hw);
                        for b in 0..n {
                            part.extend_from_slice(&g[(b * total + offset) * hw..][..ch * hw]);
                        }
                        send(k, &part);
                    }
                    offset += ch;
                }
            }
            Op::Softmax { dims } => {
                let [n, c, h, w] = *dims;
                let hw = h * w;
                let y = node.value.data();
                let mut gx = vec![T::zero(); y.len()];
                for b in 0..n {
                    for px in 0..hw {
                        let at = |k: usize| (b * c + k) * hw + px;
                        let dotp: T = (0..c).map(|k| g[at(k)] * y[at(k)]).sum();
                        for k in 0..c {
                            gx[at(k)] = y[at(k)] * (g[at(k)] - dotp);
                        }
                    }
                }
                send(0, &gx);
            }
            Op::Dropout { mask } => {
                let gx: Vec<T> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                send(0, &gx);
            }
            Op::Sum => {
                let gx = vec![g[0]; val(0).numel()];
                send(0, &gx);
            }
            Op::Mean => {
                let n = val(0).numel();
                let gx = vec![g[0] / T::lit(n as f64); n];
                send(0, &gx);
            }
            Op::GlobalAvgPool { dims } => {
                let [n, c, h, w] = *dims;
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let mut gx = vec![T::zero(); n * c * hw];
                for (plane, &gv) in g.iter().enumerate() {
                    gx[plane * hw..(plane + 1) * hw].fill(gv * inv);
                }
                send(0, &gx);
            }
            Op::Reshape => send(0, g),
            Op::CrossEntropy {
                probs,
                labels,
                weights,
                ignore,
                scale,
            } => {
                let [n, c, h, w] = val(0).dims4().expect("validated in forward");
                let hw = h * w;
                let mut gx = vec![T::zero(); probs.len()];
                let s = g[0] * *scale;
                for b in 0..n {
                    for px in 0..hw {
                        let label = labels[b * hw + px];
                        if label == *ignore {
                            continue;
                        }
                        let l = label as usize;
                        let wl = weights[l] * s;
                        for k in 0..c {
                            let i = (b * c + k) * hw + px;
                            let target = if k == l { T::one() } else { T::zero() };
                            gx[i] = wl * (probs[i] - target);
                        }
                    }
                }
                send(0, &gx);
            }
            Op::Custom(backward) => {
                let inputs: Vec<&Tensor<T>> = (0..ins.len()).map(val).collect();
                let contributions = backward(&inputs, &node.value, g);
                for (k, gk) in contributions.iter().enumerate() {
                    if k < ins.len() && gk.len() == val(k).numel() {
                        send(k, gk);
                    }
                }
            }
        }
    }

    // ---------------------------------------------------------------- layers

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, p: &Conv2dParams) -> Result<Var> {
        let s = conv::conv2d_shapes(self.value(x), self.value(w), bias.map(|b| self.value(b)), p)?;
        let out = conv::conv2d_forward(
            &s,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let shape = vec![s.n, s.f, s.geom.oh, s.geom.ow];
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, inputs, Op::Conv2d(s)))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        p: &ConvTransposeParams,
    ) -> Result<Var> {
        let s = conv::conv_transpose_shapes(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            p,
        )?;
        let out = conv::conv_transpose_forward(
            &s,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let shape = vec![s.n, s.geom.c, s.geom.h, s.geom.w];
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(value, inputs, Op::ConvTranspose2d(s)))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let g = PoolGeom::new(self.value(x), k, stride)?;
        let (out, arg) = pool::max_forward(&g, self.value(x).data());
        let value = Tensor::new(g.out_shape().to_vec(), out)?;
        let input_len = self.value(x).numel();
        Ok(self.push(value, vec![x], Op::MaxPool { input_len, arg }))
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let g = PoolGeom::new(self.value(x), k, stride)?;
        let out = pool::avg_forward(&g, self.value(x).data());
        let value = Tensor::new(g.out_shape().to_vec(), out)?;
        Ok(self.push(value, vec![x], Op::AvgPool(g)))
    }

    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: NormMode,
    ) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let (out, saved) = norm::forward(
            dims,
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            stats,
            mode,
        )?;
        let value = Tensor::new(dims.to_vec(), out)?;
        Ok(self.push(value, vec![x, gamma, beta], Op::BatchNorm { dims, saved }))
    }

    // ----------------------------------------------------------- pointwise

    fn map(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = self.value(x);
        let value = Tensor::from_fn(src.shape(), |i| f(src.data()[i]));
        self.push(value, vec![x], op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.map(x, Op::LeakyRelu(slope), |v| if v > T::zero() { v } else { v * slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid, sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.map(x, Op::Softplus, |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p())
    }

    /// Natural logarithm; inputs must be positive.
    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, Op::Log, |v| v.ln())
    }

    /// `ln(max(x, eps))`. The derivative is `1 / x` for every positive `x`,
    /// including below the floor, and `1 / eps` at or below zero.
    pub fn log_floor(&mut self, x: Var, eps: T) -> Var {
        self.map(x, Op::LogFloor(eps), |v| v.max(eps).ln())
    }

    /// Gradient flows only where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.map(x, Op::Clamp { lo, hi }, |v| v.max(lo).min(hi))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.map(x, Op::Affine { scale }, |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.affine(x, factor, T::zero())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        same_shape(self.value(a), self.value(b), what)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let value = Tensor::from_fn(self.value(a).shape(), |i| f(va[i], vb[i]));
        Ok(self.push(value, vec![a, b], op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub, "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul, "mul", |x, y| x * y)
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - p)`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate {p} outside [0, 1)")));
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let value = Tensor::from_fn(src.shape(), |i| src.data()[i] * mask[i]);
        Ok(self.push(value, vec![x], Op::Dropout { mask }))
    }

    // ------------------------------------------------------------ structure

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Usage("concat of zero tensors".into()));
        };
        let [n, _, h, w] = self.value(first).dims4()?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(format!(
                    "concat_channels: {:?} does not match N,H,W of {:?}",
                    self.value(p).shape(),
                    self.value(first).shape()
                )));
            }
            channels.push(pc);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for (&p, &ch) in parts.iter().zip(&channels) {
                out.extend_from_slice(&self.value(p).data()[b * ch * hw..(b + 1) * ch * hw]);
            }
        }
        let dims = [n, total, h, w];
        let value = Tensor::new(dims.to_vec(), out)?;
        Ok(self.push(value, parts.to_vec(), Op::Concat { dims, channels }))
    }

    /// Softmax over the channel axis of an NCHW tensor (max-subtracted).
    pub fn softmax_channel(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let out = softmax_nchw(dims, self.value(x).data());
        let value = Tensor::new(dims.to_vec(), out)?;
        Ok(self.push(value, vec![x], Op::Softmax { dims }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), vec![x], Op::Sum)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let s: T = src.data().iter().copied().sum();
        let m = s / T::lit(src.numel() as f64);
        self.push(Tensor::scalar(m), vec![x], Op::Mean)
    }

    /// `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let dims = self.value(x).dims4()?;
        let [n, c, h, w] = dims;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let data = self.value(x).data();
        let out: Vec<T> = (0..n * c)
            .map(|pl| data[pl * hw..(pl + 1) * hw].iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c, 1, 1], out)?;
        Ok(self.push(value, vec![x], Op::GlobalAvgPool { dims }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, vec![x], Op::Reshape))
    }

    /// Class-weighted softmax cross-entropy over NCHW logits.
    ///
    /// `labels` holds one class id per pixel (`N*H*W`), `ignore` marks pixels
    /// that contribute nothing. Returns the loss and the number of scored
    /// pixels; with zero scored pixels the loss is 0.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        labels: &[u8],
        weights: &[T],
        ignore: u8,
        reduction: Reduction,
    ) -> Result<(Var, usize)> {
        let dims = self.value(logits).dims4()?;
        let [n, c, h, w] = dims;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(Error::dim(format!(
                "cross_entropy: {} labels for logits {:?}",
                labels.len(),
                dims
            )));
        }
        if weights.len() != c {
            return Err(Error::dim(format!(
                "cross_entropy: {} class weights for {c} classes",
                weights.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != ignore && l as usize >= c) {
            return Err(Error::dim(format!(
                "cross_entropy: label {bad} outside 0..{c}"
            )));
        }
        let x = self.value(logits).data();
        let probs = softmax_nchw(dims, x);
        let mut total = T::zero();
        let mut valid = 0usize;
        for b in 0..n {
            for px in 0..hw {
                let label = labels[b * hw + px];
                if label == ignore {
                    continue;
                }
                let l = label as usize;
                let at = |k: usize| (b * c + k) * hw + px;
                let mut m = x[at(0)];
                for k in 1..c {
                    m = m.max(x[at(k)]);
                }
                let mut se = T::zero();
                for k in 0..c {
                    se += (x[at(k)] - m).exp();
                }
                // -log softmax_l = logsumexp - a_l
                total += weights[l] * (m + se.ln() - x[at(l)]);
                valid += 1;
            }
        }
        let scale = match reduction {
            Reduction::Mean if valid > 0 => T::one() / T::lit(valid as f64),
            Reduction::Mean => T::zero(),
            Reduction::Sum => T::one(),
        };
        let value = Tensor::scalar(total * scale);
        let op = Op::CrossEntropy {
            probs,
            labels: labels.to_vec(),
            weights: weights.to_vec(),
            ignore,
            scale,
        };
        Ok((self.push(value, vec![logits], op), valid))
    }

    /// Records an operation whose forward value was computed by the caller.
    /// `backward(inputs, output, grad_output)` returns one gradient per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<T>,
        backward: impl Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>> + 'static,
    ) -> Var {
        self.push(value, inputs.to_vec(), Op::Custom(Box::new(backward)))
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_nchw<T: Real>(dims: [usize; 4], x: &[T]) -> Vec<T> {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for px in 0..hw {
            let at = |k: usize| (b * c + k) * hw + px;
            let mut m = x[at(0)];
            for k in 1..c {
                m = m.max(x[at(k)]);
            }
            let mut se = T::zero();
            for k in 0..c {
                let e = (x[at(k)] - m).exp();
                out[at(k)] = e;
                se += e;
            }
            for k in 0..c {
                out[at(k)] = out[at(k)] / se;
            }
        }
    }
    out
}
