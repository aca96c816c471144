//! Adversarial foggy-to-clear mapping at desk scale.
//!
//! A residual generator `G` maps foggy images towards the clear domain and a
//! small convolutional discriminator `D` scores images as clear. Both are
//! trained with alternating updates on unpaired samples.

use crate::dataio::synthetic::shapes_scene;
use crate::dataio::Translator;
use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, PlanarImage};
use crate::dataio::{LabelTensor, NUM_CLASSES};
use crate::segnet::{build_network, forward, seg_loss, ClassWeights, LayerParams, NetworkSpec};
use crate::tensor::{
    kaiming_uniform, seeded_rng, NormMode, Reduction, splitmix_seed, AdamConfig, AdamState, Conv2dParams, Real, Rng, Tape,
    Tensor, Var,
};
use crate::tensor::checkpoint::NamedTensor;
use crate::train::{adam_from_named, adam_to_named, adam_update, check_finite};
use rand::Rng as _;
use std::collections::BTreeMap;

/// Log arguments are floored at `PROB_CLAMP`; the floor bounds the value but
/// not the gradient, so a saturated discriminator still trains the generator.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_LAMBDA_SEG: f64 = 0.10;
/// The toy pair diverges at the segmentation learning rate; the betas are shared.
pub const DEFAULT_GAN_LR: f64 = 1e-3;

/// Generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GenLossForm {
    /// `-mean(log D(G(x)))`.
    #[default]
    NonSaturating,
    /// `mean(log(1 - D(G(x))))`, the literal minimax term.
    Minimax,
}

impl std::str::FromStr for GenLossForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_saturating" => Ok(Self::NonSaturating),
            "minimax" => Ok(Self::Minimax),
            other => Err(Error::Config(format!(
                "gan.gen_loss must be non_saturating or minimax, got `{other}`"
            ))),
        }
    }
}

fn clamped_log<T: Real>(tape: &mut Tape<T>, p: Var, complement: bool) -> Var {
    let eps = T::lit(PROB_CLAMP);
    let q = if complement { tape.affine(p, -T::one(), T::one()) } else { p };
    tape.log_floor(q, eps)
}

fn check_probs<T: Real>(tape: &Tape<T>, v: Var, what: &str) -> Result<()> {
    if tape.value(v).numel() == 0 {
        return Err(Error::Usage(format!("{what} batch is empty")));
    }
    Ok(())
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn disc_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    check_probs(tape, d_real, "real")?;
    check_probs(tape, d_fake, "fake")?;
    let lr = clamped_log(tape, d_real, false);
    let lr = tape.mean(lr);
    let lf = clamped_log(tape, d_fake, true);
    let lf = tape.mean(lf);
    let s = tape.add(lr, lf)?;
    Ok(tape.scale(s, -T::one()))
}

pub fn gen_loss<T: Real>(tape: &mut Tape<T>, d_fake: Var, form: GenLossForm) -> Result<Var> {
    check_probs(tape, d_fake, "fake")?;
    Ok(match form {
        GenLossForm::NonSaturating => {
            let l = clamped_log(tape, d_fake, false);
            let m = tape.mean(l);
            tape.scale(m, -T::one())
        }
        GenLossForm::Minimax => {
            let l = clamped_log(tape, d_fake, true);
            tape.mean(l)
        }
    })
}

/// [`disc_loss`] on discriminator logits `z` with `D = sigmoid(z)`:
/// `mean(softplus(-z_real)) + mean(softplus(z_fake))`. No floor is needed,
/// and gradients stay finite and non-zero however saturated `D` becomes.
pub fn disc_loss_from_logits<T: Real>(tape: &mut Tape<T>, z_real: Var, z_fake: Var) -> Result<Var> {
    check_probs(tape, z_real, "real")?;
    check_probs(tape, z_fake, "fake")?;
    let nr = tape.scale(z_real, -T::one());
    let lr = tape.softplus(nr);
    let lr = tape.mean(lr);
    let lf = tape.softplus(z_fake);
    let lf = tape.mean(lf);
    tape.add(lr, lf)
}

/// [`gen_loss`] on discriminator logits.
pub fn gen_loss_from_logits<T: Real>(tape: &mut Tape<T>, z_fake: Var, form: GenLossForm) -> Result<Var> {
    check_probs(tape, z_fake, "fake")?;
    Ok(match form {
        GenLossForm::NonSaturating => {
            let nz = tape.scale(z_fake, -T::one());
            let l = tape.softplus(nz);
            tape.mean(l)
        }
        GenLossForm::Minimax => {
            let l = tape.softplus(z_fake);
            let m = tape.mean(l);
            tape.scale(m, -T::one())
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdvLoss {
    pub gen_loss: Var,
    pub disc_loss: Var,
}

pub fn adv_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var, form: GenLossForm) -> Result<AdvLoss> {
    Ok(AdvLoss {
        disc_loss: disc_loss(tape, d_real, d_fake)?,
        gen_loss: gen_loss(tape, d_fake, form)?,
    })
}

/// `l_adv + lambda_seg * l_seg`.
pub fn joint_loss<T: Real>(tape: &mut Tape<T>, l_adv: Var, l_seg: Var, lambda_seg: f64) -> Result<Var> {
    let s = tape.scale(l_seg, T::lit(lambda_seg));
    tape.add(l_adv, s)
}

/// Gradients of the segmentation parameters under the joint loss compared
/// with those of the segmentation loss alone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointGradCheck {
    pub lambda_seg: f64,
    /// Least-squares slope of joint against standalone gradients.
    pub ratio: f64,
    /// `max |g_joint - lambda g_seg| / max |lambda g_seg|`.
    pub max_rel_dev: f64,
    pub compared: usize,
}

/// Builds `G -> segmentation network` on a seeded 2x3x16x16 batch in 64-bit
/// precision and backpropagates both the joint loss and the bare
/// segmentation loss through identical graphs.
pub fn joint_gradient_check(seed: u64, lambda_seg: f64) -> Result<JointGradCheck> {
    let mut rng = seeded_rng(seed);
    let gan = ToyGanSpec {
        identity_init: false,
        ..Default::default()
    };
    let (g, d) = gan.build::<f64>(&mut rng)?;
    let spec = NetworkSpec::default();
    let seg = build_network::<f64>(&spec, &mut rng)?;
    let (n, h, w) = (2, 16, 16);
    let x = Tensor::from_fn(&[n, 3, h, w], |_| rng.gen_range(0.0..1.0));
    let aux = Tensor::from_fn(&[n, spec.aux_channels, h, w], |_| rng.gen_range(0.0..1.0));
    let labels = LabelTensor {
        n,
        height: h,
        width: w,
        ids: (0..n * h * w).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect(),
    };
    let weights = ClassWeights::uniform(NUM_CLASSES);
    let dropout_seed = rng.gen::<u64>();

    let grads = |joint: bool| -> Result<BTreeMap<String, Vec<f64>>> {
        let mut tape = Tape::new();
        let gv = bind(&mut tape, &g, true);
        let dv = bind(&mut tape, &d, true);
        let xv = tape.constant(x.clone());
        let av = tape.constant(aux.clone());
        let fake = generator_forward(&mut tape, &gan, &gv, xv)?;
        let mut params = seg.clone();
        let f = forward(&mut tape, &mut params, &spec, fake, Some(av), NormMode::Train, &mut seeded_rng(dropout_seed))?;
        let l_seg = seg_loss(&mut tape, f.logits(), &labels, &weights, Reduction::Mean)?.loss;
        let loss = if joint {
            let z = discriminator_logits(&mut tape, &gan, &dv, fake)?;
            let p = tape.sigmoid(z);
            let l_adv = gen_loss(&mut tape, p, GenLossForm::NonSaturating)?;
            joint_loss(&mut tape, l_adv, l_seg, lambda_seg)?
        } else {
            l_seg
        };
        tape.backward(loss)?;
        Ok(f.params
            .iter()
            .map(|(k, &v)| (k.clone(), tape.grad(v).map_or_else(Vec::new, <[f64]>::to_vec)))
            .collect())
    };
    let joint = grads(true)?;
    let alone = grads(false)?;
    let (mut num, mut den, mut dev, mut scale, mut compared) = (0.0, 0.0, 0.0f64, 0.0f64, 0);
    for (k, gs) in &alone {
        let gj = &joint[k];
        if gj.len() != gs.len() {
            return Err(Error::State(format!("gradient of {k} missing from one pass")));
        }
        for (&a, &b) in gj.iter().zip(gs) {
            num += a * b;
            den += b * b;
            dev = dev.max((a - lambda_seg * b).abs());
            scale = scale.max((lambda_seg * b).abs());
            compared += 1;
        }
    }
    if compared == 0 || den == 0.0 {
        return Err(Error::State("no segmentation gradients to compare".into()));
    }
    Ok(JointGradCheck {
        lambda_seg,
        ratio: num / den,
        max_rel_dev: dev / scale,
        compared,
    })
}

/// Layer widths of the toy generator and discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyGanSpec {
    pub channels: usize,
    pub gen_widths: [usize; 2],
    pub disc_widths: [usize; 2],
    pub leaky_slope: f64,
    /// Bound on the per-pixel generator correction.
    pub max_correction: f64,
    /// Zero the generator's output conv so it starts as the identity.
    pub identity_init: bool,
}

impl Default for ToyGanSpec {
    fn default() -> Self {
        Self {
            channels: 3,
            gen_widths: [8, 16],
            disc_widths: [8, 16],
            leaky_slope: 0.2,
            max_correction: 1.0,
            identity_init: true,
        }
    }
}

const GEN: [&str; 3] = ["g.conv1", "g.conv2", "g.conv3"];
const DISC: [&str; 3] = ["d.conv1", "d.conv2", "d.conv3"];

impl ToyGanSpec {
    fn gen_layers(&self) -> [(usize, usize); 3] {
        let [a, b] = self.gen_widths;
        [(self.channels, a), (a, b), (b, self.channels)]
    }

    fn disc_layers(&self) -> [(usize, usize); 3] {
        let [a, b] = self.disc_widths;
        [(self.channels, a), (a, b), (b, 1)]
    }

    fn decls(&self, names: [&str; 3], layers: [(usize, usize); 3]) -> Vec<(String, Vec<usize>)> {
        names
            .iter()
            .zip(layers)
            .flat_map(|(n, (ci, co))| [(format!("{n}.weight"), vec![co, ci, 3, 3]), (format!("{n}.bias"), vec![co])])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.gen_widths.contains(&0) || self.disc_widths.contains(&0) {
            return Err(Error::Construction {
                layer: "gan".into(),
                reason: "zero-width layer".into(),
            });
        }
        Ok(())
    }

    fn init<T: Real>(&self, names: [&str; 3], layers: [(usize, usize); 3], zero_last: bool, rng: &mut Rng) -> LayerParams<T> {
        let mut params = BTreeMap::new();
        for (i, (n, (ci, co))) in names.iter().zip(layers).enumerate() {
            let w = if zero_last && i == 2 {
                Tensor::zeros(&[co, ci, 3, 3])
            } else {
                kaiming_uniform(&[co, ci, 3, 3], ci * 9, rng)
            };
            params.insert(format!("{n}.weight"), w);
            params.insert(format!("{n}.bias"), Tensor::zeros(&[co]));
        }
        LayerParams {
            params,
            norms: BTreeMap::new(),
        }
    }

    /// Generator then discriminator, both drawn from `rng`.
    pub fn build<T: Real>(&self, rng: &mut Rng) -> Result<(LayerParams<T>, LayerParams<T>)> {
        self.validate()?;
        let g = self.init(GEN, self.gen_layers(), self.identity_init, rng);
        let d = self.init(DISC, self.disc_layers(), false, rng);
        Ok((g, d))
    }

    /// Restores generator (`prefix = "gen."`) or discriminator weights.
    pub fn from_named(&self, entries: &[NamedTensor], prefix: &str, generator: bool) -> Result<LayerParams<f32>> {
        let decls = if generator {
            self.decls(GEN, self.gen_layers())
        } else {
            self.decls(DISC, self.disc_layers())
        };
        let index: BTreeMap<&str, &Tensor<f32>> = entries.iter().map(|(k, t)| (k.as_str(), t)).collect();
        let mut params = BTreeMap::new();
        for (name, shape) in decls {
            let t = index.get(format!("{prefix}{name}").as_str()).ok_or_else(|| Error::CheckpointMismatch {
                layer: name.clone(),
                reason: "missing from checkpoint".into(),
            })?;
            if t.shape() != shape {
                return Err(Error::CheckpointMismatch {
                    layer: name,
                    reason: format!("checkpoint shape {:?}, network expects {shape:?}", t.shape()),
                });
            }
            params.insert(name, (*t).clone());
        }
        Ok(LayerParams {
            params,
            norms: BTreeMap::new(),
        })
    }
}

/// Puts every tensor of `p` on the tape as a leaf.
pub fn bind<T: Real>(tape: &mut Tape<T>, p: &LayerParams<T>, trainable: bool) -> BTreeMap<String, Var> {
    p.params
        .iter()
        .map(|(k, t)| (k.clone(), tape.leaf(t.clone(), trainable)))
        .collect()
}

fn conv<T: Real>(tape: &mut Tape<T>, b: &BTreeMap<String, Var>, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = b[&format!("{name}.weight")];
    let bias = b[&format!("{name}.bias")];
    tape.conv2d(x, w, Some(bias), &Conv2dParams::square(stride, 1, 1))
}

fn check_images<T: Real>(tape: &Tape<T>, x: Var, channels: usize) -> Result<()> {
    let [n, c, _, _] = tape.value(x).dims4()?;
    if n == 0 || c != channels {
        return Err(Error::dim(format!(
            "expected a non-empty [N, {channels}, H, W] image batch, got {:?}",
            tape.shape(x)
        )));
    }
    Ok(())
}

/// `x + m tanh(correction(x))` with `m = max_correction`.
pub fn generator_forward<T: Real>(tape: &mut Tape<T>, spec: &ToyGanSpec, g: &BTreeMap<String, Var>, x: Var) -> Result<Var> {
    check_images(tape, x, spec.channels)?;
    let slope = T::lit(spec.leaky_slope);
    let h = conv(tape, g, GEN[0], x, 1)?;
    let h = tape.leaky_relu(h, slope);
    let h = conv(tape, g, GEN[1], h, 1)?;
    let h = tape.leaky_relu(h, slope);
    let r = conv(tape, g, GEN[2], h, 1)?;
    // m tanh(r) = 2m sigmoid(2r) - m
    let m = T::lit(spec.max_correction);
    let r = tape.scale(r, T::lit(2.0));
    let r = tape.sigmoid(r);
    let r = tape.affine(r, m + m, -m);
    tape.add(x, r)
}

/// Probability `[N]` that each image is from the clear domain.
pub fn discriminator_forward<T: Real>(tape: &mut Tape<T>, spec: &ToyGanSpec, d: &BTreeMap<String, Var>, x: Var) -> Result<Var> {
    let z = discriminator_logits(tape, spec, d, x)?;
    Ok(tape.sigmoid(z))
}

/// Pre-sigmoid discriminator scores `[N]`.
pub fn discriminator_logits<T: Real>(tape: &mut Tape<T>, spec: &ToyGanSpec, d: &BTreeMap<String, Var>, x: Var) -> Result<Var> {
    check_images(tape, x, spec.channels)?;
    let n = tape.shape(x)[0];
    let slope = T::lit(spec.leaky_slope);
    let h = conv(tape, d, DISC[0], x, 2)?;
    let h = tape.leaky_relu(h, slope);
    let h = conv(tape, d, DISC[1], h, 2)?;
    let h = tape.leaky_relu(h, slope);
    let h = conv(tape, d, DISC[2], h, 2)?;
    let h = tape.global_avg_pool(h)?;
    tape.reshape(h, &[n])
}

/// Runs `G` and clamps to `[0, 1]`. Shape is preserved.
pub fn translate<T: Real>(spec: &ToyGanSpec, generator: &LayerParams<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let g = bind(&mut tape, generator, false);
    let x = tape.constant(images.clone());
    let y = generator_forward(&mut tape, spec, &g, x)?;
    let y = tape.clamp(y, T::zero(), T::one());
    Ok(tape.value(y).clone())
}

/// Trained generator usable as a batch translator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTranslator {
    pub spec: ToyGanSpec,
    pub params: LayerParams<f32>,
}

impl Translator for GeneratorTranslator {
    fn translate_image(&self, img: &PlanarImage) -> Result<PlanarImage> {
        if img.colorspace() != ColorSpace::Rgb {
            return Err(Error::Parameter(format!("translator needs RGB input, got {:?}", img.colorspace())));
        }
        let t = image_to_tensor(std::slice::from_ref(img))?;
        let out = translate(&self.spec, &self.params, &t)?;
        Ok(tensor_to_images(&out)?.remove(0))
    }
}

/// Stacks same-sized RGB images into `[N, 3, H, W]`.
pub fn image_to_tensor(images: &[PlanarImage]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::Usage("no images to stack".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width() != w || img.height() != h || img.channels() != 3 {
            return Err(Error::dim(format!(
                "cannot stack a {}x{}x{} image with {w}x{h}x3",
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        for p in img.planes() {
            data.extend(p.iter().map(|&v| v as f32));
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

pub fn tensor_to_images(t: &Tensor<f32>) -> Result<Vec<PlanarImage>> {
    let [n, c, h, w] = t.dims4()?;
    if c != 3 {
        return Err(Error::dim(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    (0..n)
        .map(|i| {
            let planes = (0..3)
                .map(|k| {
                    let off = (i * 3 + k) * plane;
                    t.data()[off..off + plane].iter().map(|&v| v as f64).collect()
                })
                .collect();
            PlanarImage::new(w, h, ColorSpace::Rgb, planes)
        })
        .collect()
}

/// Unpaired foggy (`source`) and clear (`target`) image batches.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPair {
    pub source: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl DomainPair {
    pub fn new(source: Tensor<f32>, target: Tensor<f32>) -> Result<Self> {
        let [ns, cs, hs, ws] = source.dims4()?;
        let [nt, ct, ht, wt] = target.dims4()?;
        if ns == 0 || nt == 0 {
            return Err(Error::Usage("both domains need at least one sample".into()));
        }
        if (cs, hs, ws) != (ct, ht, wt) {
            return Err(Error::dim(format!(
                "source samples are {cs}x{hs}x{ws}, target samples {ct}x{ht}x{wt}"
            )));
        }
        Ok(Self { source, target })
    }
}

/// Gathers samples `idx` of `[N, C, H, W]` into a new batch.
pub fn gather(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let [_, c, h, w] = t.dims4().expect("4-d batch");
    let per = c * h * w;
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    Tensor::new(vec![idx.len(), c, h, w], data).expect("sized")
}

pub fn mean_abs_error(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() || a.numel() == 0 {
        return Err(Error::dim(format!("cannot compare {:?} with {:?}", a.shape(), b.shape())));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum();
    Ok(s / a.numel() as f64)
}

/// `(1 - strength) * img + strength * gray`.
pub fn veil(img: &Tensor<f32>, strength: f32, gray: f32) -> Tensor<f32> {
    Tensor::from_fn(img.shape(), |i| (1.0 - strength) * img.data()[i] + strength * gray)
}

/// Synthetic de-veiling task: veiled scenes as the source domain, a
/// disjoint set of clean scenes as the target, and the clean originals of
/// the source for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct VeilCorpus {
    pub pair: DomainPair,
    pub source_clean: Tensor<f32>,
}

pub const VEIL_STRENGTH: f32 = 0.5;
pub const VEIL_GRAY: f32 = 0.7;

pub fn veil_corpus(n: usize, size: usize, seed: u64) -> Result<VeilCorpus> {
    let mut rng = seeded_rng(seed);
    let mut scenes = |tag: &str| -> Result<Tensor<f32>> {
        let imgs = (0..n)
            .map(|i| shapes_scene(&format!("{tag}_{i:03}"), size, size, &mut rng).map(|s| s.rgb))
            .collect::<Result<Vec<_>>>()?;
        image_to_tensor(&imgs)
    };
    let source_clean = scenes("source")?;
    let target = scenes("target")?;
    let source = veil(&source_clean, VEIL_STRENGTH, VEIL_GRAY);
    Ok(VeilCorpus {
        pair: DomainPair::new(source, target)?,
        source_clean,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanConfig {
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub gen_loss: GenLossForm,
    /// Keep the generator fixed; only `D` learns.
    pub freeze_generator: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            seed: 0,
            adam: AdamConfig {
                learning_rate: DEFAULT_GAN_LR,
                ..AdamConfig::default()
            },
            gen_loss: GenLossForm::NonSaturating,
            freeze_generator: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanTraceRow {
    pub step: u64,
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
}

pub const GAN_TRACE_HEADER: &str = "step,disc_loss,gen_loss,d_real,d_fake";

impl GanTraceRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.disc_loss, self.gen_loss, self.d_real, self.d_fake)
    }
}

/// Generator, discriminator and their optimisers.
#[derive(Clone, Debug, PartialEq)]
pub struct GanTrainer {
    pub spec: ToyGanSpec,
    pub generator: LayerParams<f32>,
    pub discriminator: LayerParams<f32>,
    pub gen_adam: AdamState<f32>,
    pub disc_adam: AdamState<f32>,
    pub config: GanConfig,
}

fn mean_sigmoid(z: &Tensor<f32>) -> f64 {
    z.data().iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())).sum::<f64>() / z.numel() as f64
}

impl GanTrainer {
    pub fn new(spec: ToyGanSpec, config: GanConfig) -> Result<Self> {
        let (generator, discriminator) = spec.build(&mut seeded_rng(config.seed))?;
        Self::from_params(spec, generator, discriminator, config)
    }

    pub fn from_params(
        spec: ToyGanSpec,
        generator: LayerParams<f32>,
        discriminator: LayerParams<f32>,
        config: GanConfig,
    ) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::Parameter("gan batch size must be at least 1".into()));
        }
        let sizes = |p: &LayerParams<f32>| p.params.values().map(Tensor::numel).collect::<Vec<_>>();
        Ok(Self {
            gen_adam: AdamState::new(config.adam, &sizes(&generator))?,
            disc_adam: AdamState::new(config.adam, &sizes(&discriminator))?,
            spec,
            generator,
            discriminator,
            config,
        })
    }

    pub fn steps_done(&self) -> u64 {
        self.disc_adam.step_count
    }

    /// One discriminator update followed by one generator update on the
    /// given unpaired batches.
    pub fn step(&mut self, source: &Tensor<f32>, target: &Tensor<f32>) -> Result<GanTraceRow> {
        let d = self.disc_step(source, target)?;
        let step = d.step;

        let mut tape = Tape::new();
        let g = bind(&mut tape, &self.generator, !self.config.freeze_generator);
        let d_vars = bind(&mut tape, &self.discriminator, false);
        let x = tape.constant(source.clone());
        let fake = generator_forward(&mut tape, &self.spec, &g, x)?;
        let z_fake = discriminator_logits(&mut tape, &self.spec, &d_vars, fake)?;
        let l_g = gen_loss_from_logits(&mut tape, z_fake, self.config.gen_loss)?;
        let gen_value = tape.value(l_g).item()? as f64;
        check_finite(step, "generator loss", gen_value)?;
        if !self.config.freeze_generator {
            tape.backward(l_g)?;
            adam_update(&mut self.gen_adam, &mut self.generator, &tape, &g)?;
        }
        Ok(GanTraceRow {
            gen_loss: gen_value,
            ..d
        })
    }

    /// Updates `D` only. The returned row has `gen_loss` unset (NaN).
    pub fn disc_step(&mut self, source: &Tensor<f32>, target: &Tensor<f32>) -> Result<GanTraceRow> {
        let step = self.steps_done() + 1;
        let mut tape = Tape::new();
        let g = bind(&mut tape, &self.generator, false);
        let d = bind(&mut tape, &self.discriminator, true);
        let x = tape.constant(source.clone());
        let y = tape.constant(target.clone());
        let fake = generator_forward(&mut tape, &self.spec, &g, x)?;
        let z_real = discriminator_logits(&mut tape, &self.spec, &d, y)?;
        let z_fake = discriminator_logits(&mut tape, &self.spec, &d, fake)?;
        let l_d = disc_loss_from_logits(&mut tape, z_real, z_fake)?;
        let disc_value = tape.value(l_d).item()? as f64;
        check_finite(step, "discriminator loss", disc_value)?;
        let d_real = mean_sigmoid(tape.value(z_real));
        let d_fake = mean_sigmoid(tape.value(z_fake));
        tape.backward(l_d)?;
        adam_update(&mut self.disc_adam, &mut self.discriminator, &tape, &d)?;
        Ok(GanTraceRow {
            step,
            disc_loss: disc_value,
            gen_loss: f64::NAN,
            d_real,
            d_fake,
        })
    }

    /// Generator, discriminator and both optimiser states under `gen.`,
    /// `disc.`, `gen_adam.` and `disc_adam.`.
    pub fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = self.generator.to_named("gen.");
        out.extend(self.discriminator.to_named("disc."));
        out.extend(adam_to_named(&self.gen_adam, &self.generator, "gen_adam."));
        out.extend(adam_to_named(&self.disc_adam, &self.discriminator, "disc_adam."));
        out
    }

    pub fn from_named(spec: ToyGanSpec, config: GanConfig, entries: &[NamedTensor]) -> Result<Self> {
        let generator = spec.from_named(entries, "gen.", true)?;
        let discriminator = spec.from_named(entries, "disc.", false)?;
        let mut t = Self::from_params(spec, generator, discriminator, config)?;
        adam_from_named(&mut t.gen_adam, &t.generator, entries, "gen_adam.")?;
        adam_from_named(&mut t.disc_adam, &t.discriminator, entries, "disc_adam.")?;
        Ok(t)
    }

    /// Draws the step's batches from `pair` with a stream keyed by the step
    /// number, so resumed runs see the same samples.
    pub fn sample(&self, pair: &DomainPair, step: u64) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = seeded_rng(splitmix_seed(self.config.seed, step));
        let ns = pair.source.shape()[0];
        let nt = pair.target.shape()[0];
        let si: Vec<usize> = (0..self.config.batch).map(|_| rng.gen_range(0..ns)).collect();
        let ti: Vec<usize> = (0..self.config.batch).map(|_| rng.gen_range(0..nt)).collect();
        (gather(&pair.source, &si), gather(&pair.target, &ti))
    }

    pub fn train_step(&mut self, pair: &DomainPair) -> Result<GanTraceRow> {
        let (x, y) = self.sample(pair, self.steps_done() + 1);
        self.step(&x, &y)
    }

    pub fn translator(&self) -> GeneratorTranslator {
        GeneratorTranslator {
            spec: self.spec.clone(),
            params: self.generator.clone(),
        }
    }
}

/// A run that stopped early, with the rows recorded before the failure.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub trace: Vec<GanTraceRow>,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} after {} recorded steps", self.error, self.trace.len())
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanRun {
    pub trainer: GanTrainer,
    pub trace: Vec<GanTraceRow>,
}

pub fn train_toy_gan(pair: &DomainPair, spec: ToyGanSpec, config: GanConfig) -> std::result::Result<GanRun, Box<Aborted>> {
    let abort = |error, trace| Box::new(Aborted { error, trace });
    if config.steps == 0 {
        return Err(abort(Error::Parameter("gan training needs at least one step".into()), Vec::new()));
    }
    let mut trainer = GanTrainer::new(spec, config).map_err(|e| abort(e, Vec::new()))?;
    let mut trace = Vec::with_capacity(trainer.config.steps as usize);
    while trainer.steps_done() < trainer.config.steps {
        match trainer.train_step(pair) {
            Ok(row) => trace.push(row),
            Err(e) => return Err(abort(e, trace)),
        }
    }
    Ok(GanRun { trainer, trace })
}
