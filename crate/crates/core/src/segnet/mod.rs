//! Dual-encoder segmentation network: an RGB encoder of factorised residual
//! blocks, a densely connected depth/luminance encoder, sum fusion at every
//! stage width and a skip-connected decoder. Also the class-weighted loss.

mod graph;
mod loss;
mod spec;

pub use graph::{Init, Outputs, ParamDecl};
pub use loss::{class_weights, seg_loss, ClassWeights, SegLoss, DEFAULT_C};
pub use spec::NetworkSpec;

use crate::error::{Error, Result};
use crate::tensor::checkpoint::NamedTensor;
use crate::tensor::{kaiming_uniform, BatchNormStats, NormMode, Real, Rng, Tape, Tensor, Var};
use graph::{network, Planner, Runner};
use std::collections::BTreeMap;

/// Parameter declarations and batch-norm layers `(name, channels)` of `spec`.
pub fn plan(spec: &NetworkSpec) -> Result<(Vec<ParamDecl>, Vec<(String, usize)>)> {
    spec.validate()?;
    let mut p = Planner::default();
    let aux = (spec.aux_channels > 0).then_some(spec.aux_channels);
    network(&mut p, spec, spec.rgb_channels, aux)?;
    Ok((p.params, p.norms))
}

/// Learnable tensors and batch-norm statistics, keyed by layer path.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub norms: BTreeMap<String, BatchNormStats<T>>,
}

const RUNNING_MEAN: &str = ".running_mean";
const RUNNING_VAR: &str = ".running_var";
const TRACKED: &str = ".tracked";

impl<T: Real> LayerParams<T> {
    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        LayerParams {
            params: self.params.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
            norms: self
                .norms
                .iter()
                .map(|(k, s)| {
                    let stats = BatchNormStats {
                        mean: cv(&s.mean),
                        var: cv(&s.var),
                        tracked: s.tracked,
                        momentum: U::lit(s.momentum.to_f64_lossy()),
                        eps: U::lit(s.eps.to_f64_lossy()),
                    };
                    (k.clone(), stats)
                })
                .collect(),
        }
    }

    /// Checkpoint entries: parameters, then running statistics, each under `prefix`.
    pub fn to_named(&self, prefix: &str) -> Vec<NamedTensor> {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy() as f32).collect::<Vec<f32>>();
        let mut out: Vec<NamedTensor> = self
            .params
            .iter()
            .map(|(k, t)| (format!("{prefix}{k}"), t.cast()))
            .collect();
        for (k, s) in &self.norms {
            let c = s.mean.len();
            out.push((format!("{prefix}{k}{RUNNING_MEAN}"), Tensor::new(vec![c], f(&s.mean)).expect("sized")));
            out.push((format!("{prefix}{k}{RUNNING_VAR}"), Tensor::new(vec![c], f(&s.var)).expect("sized")));
            // 16-bit limbs, least significant first, are exact in f32
            let limbs = (0..4).map(|i| ((s.tracked >> (16 * i)) & 0xffff) as f32).collect();
            out.push((format!("{prefix}{k}{TRACKED}"), Tensor::new(vec![4], limbs).expect("sized")));
        }
        out
    }
}

impl LayerParams<f32> {
    /// Rebuilds parameters for `spec` from checkpoint entries under `prefix`.
    /// The first planned tensor that is missing or misshapen is reported.
    pub fn from_named(spec: &NetworkSpec, entries: &[NamedTensor], prefix: &str) -> Result<Self> {
        let (decls, norms) = plan(spec)?;
        let index: BTreeMap<&str, &Tensor<f32>> = entries.iter().map(|(k, t)| (k.as_str(), t)).collect();
        let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
            let t = index.get(format!("{prefix}{name}").as_str()).ok_or_else(|| Error::CheckpointMismatch {
                layer: name.to_string(),
                reason: "missing from checkpoint".into(),
            })?;
            if t.shape() != shape {
                return Err(Error::CheckpointMismatch {
                    layer: name.to_string(),
                    reason: format!("checkpoint shape {:?}, network expects {shape:?}", t.shape()),
                });
            }
            Ok((*t).clone())
        };
        let mut params = BTreeMap::new();
        for d in &decls {
            params.insert(d.name.clone(), fetch(&d.name, &d.shape)?);
        }
        let mut out = BTreeMap::new();
        for (name, c) in norms {
            let mut s = BatchNormStats::new(c);
            s.mean = fetch(&format!("{name}{RUNNING_MEAN}"), &[c])?.into_data();
            s.var = fetch(&format!("{name}{RUNNING_VAR}"), &[c])?.into_data();
            let limbs = fetch(&format!("{name}{TRACKED}"), &[4])?.into_data();
            s.tracked = limbs.iter().rev().fold(0u64, |acc, &l| (acc << 16) | l as u64);
            out.insert(name, s);
        }
        Ok(Self { params, norms: out })
    }
}

/// Initialises every parameter of `spec` in declaration order.
pub fn build_network<T: Real>(spec: &NetworkSpec, rng: &mut Rng) -> Result<LayerParams<T>> {
    let (decls, norms) = plan(spec)?;
    let mut params = BTreeMap::new();
    for d in decls {
        let t = match d.init {
            Init::Kaiming(fan_in) => kaiming_uniform(&d.shape, fan_in, rng),
            Init::Zeros => Tensor::zeros(&d.shape),
            Init::Ones => Tensor::full(&d.shape, T::one()),
        };
        if params.insert(d.name.clone(), t).is_some() {
            return Err(Error::Construction {
                layer: d.name,
                reason: "duplicate parameter name".into(),
            });
        }
    }
    let norms = norms.into_iter().map(|(n, c)| (n, BatchNormStats::new(c))).collect();
    Ok(LayerParams { params, norms })
}

/// Result of one forward pass. `params` maps each parameter name to its leaf.
pub struct Forward {
    pub outputs: Outputs<Var>,
    pub params: BTreeMap<String, Var>,
}

impl Forward {
    pub fn logits(&self) -> Var {
        self.outputs.logits
    }
}

fn check_inputs<T: Real>(tape: &Tape<T>, spec: &NetworkSpec, rgb: Var, aux: Option<Var>) -> Result<()> {
    let [n, c, h, w] = tape.value(rgb).dims4()?;
    if c != spec.rgb_channels {
        return Err(Error::dim(format!("network expects {} input channels, got {c}", spec.rgb_channels)));
    }
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::dim(format!("input {h}x{w} is not divisible by 8")));
    }
    match (aux, spec.aux_channels) {
        (None, 0) => Ok(()),
        (Some(_), 0) => Err(Error::dim("auxiliary input given to an RGB-only network")),
        (None, k) => Err(Error::dim(format!("network expects a {k}-channel auxiliary input"))),
        (Some(a), k) => {
            let [an, ac, ah, aw] = tape.value(a).dims4()?;
            if (an, ac, ah, aw) != (n, k, h, w) {
                return Err(Error::dim(format!(
                    "auxiliary input {:?}, expected {:?}",
                    [an, ac, ah, aw],
                    [n, k, h, w]
                )));
            }
            Ok(())
        }
    }
}

/// Records the network on `tape`. Parameter leaves require gradients in
/// train mode only; `rng` drives dropout.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    params: &mut LayerParams<T>,
    spec: &NetworkSpec,
    rgb: Var,
    aux: Option<Var>,
    mode: NormMode,
    rng: &mut Rng,
) -> Result<Forward> {
    spec.validate()?;
    check_inputs(tape, spec, rgb, aux)?;
    let mut runner = Runner {
        tape,
        params: &params.params,
        norms: &mut params.norms,
        mode,
        rng,
        param_grad: mode == NormMode::Train,
        bound: BTreeMap::new(),
    };
    let outputs = network(&mut runner, spec, rgb, aux)?;
    Ok(Forward {
        outputs,
        params: runner.bound,
    })
}

/// Eval-mode logits for a batch.
pub fn predict<T: Real>(
    params: &mut LayerParams<T>,
    spec: &NetworkSpec,
    rgb: &Tensor<T>,
    aux: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(rgb.clone());
    let a = aux.map(|a| tape.constant(a.clone()));
    let mut rng = crate::tensor::seeded_rng(0);
    let f = forward(&mut tape, params, spec, x, a, NormMode::Eval, &mut rng)?;
    Ok(tape.value(f.logits()).clone())
}
