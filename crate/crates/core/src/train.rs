//! Optimisation loop pieces shared by the command line, examples and tests.

use crate::dataio::{make_batch, Batch, BatchOptions, SceneSample, IGNORE};
use crate::error::{Error, Result};
use crate::gan::{bind, discriminator_logits, gen_loss_from_logits, generator_forward, joint_loss, GanTrainer};
use crate::metrics::{argmax_predictions, ConfusionMatrix};
use crate::segnet::{build_network, forward, predict, seg_loss, ClassWeights, Forward, LayerParams, NetworkSpec};
use crate::tensor::checkpoint::NamedTensor;
use crate::tensor::{AdamConfig, AdamState, NormMode, Real, Reduction, Rng, Tape, Tensor, Var};
use std::collections::BTreeMap;

/// Stores a `u64` exactly as four 16-bit limbs, least significant first.
pub fn u64_tensor(v: u64) -> Tensor<f32> {
    let limbs = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect();
    Tensor::new(vec![4], limbs).expect("sized")
}

pub fn u64_from_tensor(t: &Tensor<f32>) -> Result<u64> {
    let d = t.data();
    if t.shape() != [4] || d.iter().any(|&l| !(0.0..65536.0).contains(&l) || l.fract() != 0.0) {
        return Err(Error::State(format!("malformed counter tensor {:?}", t.shape())));
    }
    Ok(d.iter().rev().fold(0u64, |acc, &l| (acc << 16) | l as u64))
}

fn fetch<'a>(entries: &'a [NamedTensor], name: &str) -> Result<&'a Tensor<f32>> {
    entries
        .iter()
        .find(|(k, _)| k == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::CheckpointMismatch {
            layer: name.to_string(),
            reason: "missing from checkpoint".into(),
        })
}

/// Adam moments keyed by parameter name, plus the step counter.
pub fn adam_to_named<T: Real>(adam: &AdamState<f32>, params: &LayerParams<T>, prefix: &str) -> Vec<NamedTensor> {
    let mut out = vec![(format!("{prefix}step"), u64_tensor(adam.step_count))];
    for ((k, m), v) in params.params.keys().zip(&adam.first_moment).zip(&adam.second_moment) {
        out.push((format!("{prefix}m.{k}"), Tensor::new(vec![m.len()], m.clone()).expect("sized")));
        out.push((format!("{prefix}v.{k}"), Tensor::new(vec![v.len()], v.clone()).expect("sized")));
    }
    out
}

pub fn adam_from_named<T: Real>(
    adam: &mut AdamState<f32>,
    params: &LayerParams<T>,
    entries: &[NamedTensor],
    prefix: &str,
) -> Result<()> {
    adam.step_count = u64_from_tensor(fetch(entries, &format!("{prefix}step"))?)?;
    for (i, (k, t)) in params.params.iter().enumerate() {
        for (tag, slot) in [("m", &mut adam.first_moment[i]), ("v", &mut adam.second_moment[i])] {
            let name = format!("{prefix}{tag}.{k}");
            let src = fetch(entries, &name)?;
            if src.numel() != t.numel() {
                return Err(Error::CheckpointMismatch {
                    layer: name,
                    reason: format!("{} moments for {} weights", src.numel(), t.numel()),
                });
            }
            slot.copy_from_slice(src.data());
        }
    }
    Ok(())
}

/// Segmentation network together with its optimiser state.
#[derive(Clone, Debug, PartialEq)]
pub struct SegTrainer {
    pub spec: NetworkSpec,
    pub params: LayerParams<f32>,
    pub adam: AdamState<f32>,
    pub weights: ClassWeights,
    pub reduction: Reduction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegStep {
    pub step: u64,
    pub seg_loss: f64,
    pub scored_pixels: usize,
}

/// Applies one Adam update to `params` from the gradients bound on `tape`.
pub fn adam_update(
    adam: &mut AdamState<f32>,
    params: &mut LayerParams<f32>,
    tape: &Tape<f32>,
    bound: &BTreeMap<String, Var>,
) -> Result<u64> {
    let grads: Vec<Option<&[f32]>> = params
        .params
        .keys()
        .map(|k| bound.get(k).and_then(|&v| tape.grad(v)))
        .collect();
    let mut slices: Vec<&mut [f32]> = params.params.values_mut().map(|t| t.data_mut()).collect();
    Ok(adam.step(&mut slices, &grads)?.step)
}

pub fn check_finite(step: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            reason: format!("{what} is {v}"),
        })
    }
}

impl SegTrainer {
    pub fn new(spec: NetworkSpec, weights: ClassWeights, adam: AdamConfig, rng: &mut Rng) -> Result<Self> {
        let params = build_network::<f32>(&spec, rng)?;
        Self::from_params(spec, params, weights, adam)
    }

    pub fn from_params(spec: NetworkSpec, params: LayerParams<f32>, weights: ClassWeights, adam: AdamConfig) -> Result<Self> {
        if weights.weights.len() != spec.classes {
            return Err(Error::Parameter(format!(
                "{} class weights for {} classes",
                weights.weights.len(),
                spec.classes
            )));
        }
        let sizes: Vec<usize> = params.params.values().map(|t| t.numel()).collect();
        Ok(Self {
            adam: AdamState::new(adam, &sizes)?,
            spec,
            params,
            weights,
            reduction: Reduction::Mean,
        })
    }

    /// Records a train-mode forward pass of `batch` on `tape`.
    pub fn forward_train(&mut self, tape: &mut Tape<f32>, batch: &Batch, rng: &mut Rng) -> Result<Forward> {
        let x = tape.constant(batch.input.clone());
        let a = batch.aux.clone().map(|t| tape.constant(t));
        forward(tape, &mut self.params, &self.spec, x, a, NormMode::Train, rng)
    }

    /// One optimiser step on the weighted segmentation loss.
    pub fn step(&mut self, batch: &Batch, rng: &mut Rng) -> Result<SegStep> {
        let mut tape = Tape::new();
        let f = self.forward_train(&mut tape, batch, rng)?;
        let l = seg_loss(&mut tape, f.logits(), &batch.labels, &self.weights, self.reduction)?;
        let value = tape.value(l.loss).item()? as f64;
        check_finite(self.adam.step_count + 1, "segmentation loss", value)?;
        tape.backward(l.loss)?;
        let step = adam_update(&mut self.adam, &mut self.params, &tape, &f.params)?;
        Ok(SegStep {
            step,
            seg_loss: value,
            scored_pixels: l.scored_pixels,
        })
    }

    /// Network weights under `net.` and optimiser state under `adam.`.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = self.params.to_named("net.");
        out.extend(adam_to_named(&self.adam, &self.params, "adam."));
        out
    }

    /// Restores weights and optimiser state written by [`SegTrainer::to_named`].
    pub fn from_named(spec: NetworkSpec, weights: ClassWeights, adam: AdamConfig, entries: &[NamedTensor]) -> Result<Self> {
        let params = LayerParams::from_named(&spec, entries, "net.")?;
        let mut t = Self::from_params(spec, params, weights, adam)?;
        adam_from_named(&mut t.adam, &t.params, entries, "adam.")?;
        Ok(t)
    }

    pub fn predict(&mut self, batch: &Batch) -> Result<crate::tensor::Tensor<f32>> {
        predict(&mut self.params, &self.spec, &batch.input, batch.aux.as_ref())
    }

    /// `(correct, scored)` pixel counts of eval-mode predictions.
    pub fn pixel_accuracy(&mut self, batch: &Batch) -> Result<(u64, u64)> {
        let pred = argmax_predictions(&self.predict(batch)?)?;
        let mut correct = 0;
        let mut scored = 0;
        for (&g, &p) in batch.labels.ids.iter().zip(&pred.ids) {
            if g != IGNORE {
                scored += 1;
                correct += (g == p) as u64;
            }
        }
        Ok((correct, scored))
    }
}

/// Scores eval-mode predictions on `samples`, `batch` at a time.
pub fn evaluate(
    params: &mut LayerParams<f32>,
    spec: &NetworkSpec,
    samples: &[SceneSample],
    opts: &BatchOptions,
    batch: usize,
    mut on_batch: impl FnMut(&Batch, &crate::dataio::LabelTensor) -> Result<()>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(spec.classes);
    for chunk in samples.chunks(batch.max(1)) {
        let b = make_batch(chunk, opts)?;
        let logits = predict(params, spec, &b.input, b.aux.as_ref())?;
        let pred = argmax_predictions(&logits)?;
        cm.accumulate_ids(&b.labels.ids, &pred.ids)?;
        on_batch(&b, &pred)?;
    }
    Ok(cm)
}

/// Losses of one joint step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointStep {
    pub step: u64,
    pub seg_loss: f64,
    pub adv_loss: f64,
    pub total_loss: f64,
    pub disc_loss: f64,
}

/// Segmentation network fed by the generator, trained end to end on
/// `l_adv + lambda_seg * l_seg`, with the discriminator updated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTrainer {
    pub seg: SegTrainer,
    pub gan: GanTrainer,
    pub lambda_seg: f64,
}

impl JointTrainer {
    /// `batch.input` must be un-normalised RGB in `[0, 1]`; `target` holds
    /// clear-domain images of the same size.
    pub fn step(&mut self, batch: &Batch, target: &Tensor<f32>, rng: &mut Rng) -> Result<JointStep> {
        let d = self.gan.disc_step(&batch.input, target)?;
        let step = d.step;

        let mut tape = Tape::new();
        let g = bind(&mut tape, &self.gan.generator, true);
        let dv = bind(&mut tape, &self.gan.discriminator, false);
        let x = tape.constant(batch.input.clone());
        let fake = generator_forward(&mut tape, &self.gan.spec, &g, x)?;
        let aux = batch.aux.clone().map(|t| tape.constant(t));
        let f = forward(&mut tape, &mut self.seg.params, &self.seg.spec, fake, aux, NormMode::Train, rng)?;
        let l_seg = seg_loss(&mut tape, f.logits(), &batch.labels, &self.seg.weights, self.seg.reduction)?;
        let z = discriminator_logits(&mut tape, &self.gan.spec, &dv, fake)?;
        let l_adv = gen_loss_from_logits(&mut tape, z, self.gan.config.gen_loss)?;
        let total = joint_loss(&mut tape, l_adv, l_seg.loss, self.lambda_seg)?;
        let value = |t: &Tape<f32>, v| t.value(v).item().map(|x| x as f64);
        let (seg_v, adv_v, total_v) = (value(&tape, l_seg.loss)?, value(&tape, l_adv)?, value(&tape, total)?);
        check_finite(step, "joint loss", total_v)?;
        tape.backward(total)?;
        adam_update(&mut self.seg.adam, &mut self.seg.params, &tape, &f.params)?;
        adam_update(&mut self.gan.gen_adam, &mut self.gan.generator, &tape, &g)?;
        Ok(JointStep {
            step,
            seg_loss: seg_v,
            adv_loss: adv_v,
            total_loss: total_v,
            disc_loss: d.disc_loss,
        })
    }
}
