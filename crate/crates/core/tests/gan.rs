use fogsight::dataio::Translator;
use fogsight::gan::*;
use fogsight::imaging::{ColorSpace, PlanarImage};
use fogsight::tensor::{gradcheck, seeded_rng, Tape, Tensor};
use fogsight::Error;
use proptest::prelude::*;
use std::f64::consts::LN_2;

fn probs(t: &mut Tape<f64>, v: &[f64]) -> fogsight::Var {
    t.constant(Tensor::new(vec![v.len()], v.to_vec()).unwrap())
}

#[test]
fn losses_at_the_equilibrium() {
    let mut t = Tape::new();
    let half = probs(&mut t, &[0.5; 4]);
    let ns = adv_loss(&mut t, half, half, GenLossForm::NonSaturating).unwrap();
    let mm = adv_loss(&mut t, half, half, GenLossForm::Minimax).unwrap();
    let v = |t: &Tape<f64>, x| t.value(x).item().unwrap();
    assert!((v(&t, ns.disc_loss) - 2.0 * LN_2).abs() < 1e-15);
    assert!((v(&t, ns.disc_loss) - 1.3863).abs() < 1e-4);
    assert!((v(&t, ns.gen_loss) - LN_2).abs() < 1e-15);
    assert!((v(&t, ns.gen_loss) - v(&t, ns.disc_loss) / 2.0).abs() < 1e-15);
    assert!((v(&t, mm.gen_loss) + LN_2).abs() < 1e-15);
}

#[test]
fn saturated_discriminators() {
    let mut t = Tape::new();
    let real = probs(&mut t, &[1.0 - 1e-12; 3]);
    let fake = probs(&mut t, &[1e-12; 3]);
    let good = adv_loss(&mut t, real, fake, GenLossForm::NonSaturating).unwrap();
    assert!(t.value(good.disc_loss).item().unwrap() < 1e-6);
    let fooled = probs(&mut t, &[1.0; 3]);
    let l = gen_loss(&mut t, fooled, GenLossForm::NonSaturating).unwrap();
    assert_eq!(t.value(l).item().unwrap(), 0.0);
    let zero = probs(&mut t, &[0.0; 3]);
    let l = gen_loss(&mut t, zero, GenLossForm::NonSaturating).unwrap();
    assert!(t.value(l).item().unwrap().is_finite());
}

#[test]
fn empty_batches_are_usage_errors() {
    let mut t = Tape::new();
    let e = t.constant(Tensor::zeros(&[0]));
    let h = probs(&mut t, &[0.5]);
    assert!(matches!(adv_loss(&mut t, e, h, GenLossForm::NonSaturating), Err(Error::Usage(_))));
    assert!(matches!(adv_loss(&mut t, h, e, GenLossForm::NonSaturating), Err(Error::Usage(_))));
}

#[test]
fn adversarial_gradients_match_finite_differences() {
    let real = Tensor::new(vec![4], vec![0.2, 0.55, 0.9, 0.35]).unwrap();
    let fake = Tensor::new(vec![4], vec![0.1, 0.45, 0.7, 0.62]).unwrap();
    for form in [GenLossForm::NonSaturating, GenLossForm::Minimax] {
        let r = gradcheck(
            |t, v| {
                let l = adv_loss(t, v[0], v[1], form)?;
                let g = t.scale(l.gen_loss, 0.37);
                t.add(l.disc_loss, g)
            },
            &[real.clone(), fake.clone()],
            1e-6,
            1e-4,
        );
        assert!(r.passed, "{form:?}: {:?}", r.worst());
    }
}

proptest! {
    #[test]
    fn logit_and_probability_forms_agree(
        zr in prop::collection::vec(-8.0f64..8.0, 1..6),
        zf in prop::collection::vec(-8.0f64..8.0, 1..6),
    ) {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![zr.len()], zr).unwrap());
        let b = t.constant(Tensor::new(vec![zf.len()], zf).unwrap());
        let (pa, pb) = (t.sigmoid(a), t.sigmoid(b));
        let p = adv_loss(&mut t, pa, pb, GenLossForm::NonSaturating).unwrap();
        let dl = disc_loss_from_logits(&mut t, a, b).unwrap();
        let gl = gen_loss_from_logits(&mut t, b, GenLossForm::NonSaturating).unwrap();
        let gm = gen_loss_from_logits(&mut t, b, GenLossForm::Minimax).unwrap();
        let pm = gen_loss(&mut t, pb, GenLossForm::Minimax).unwrap();
        for (x, y) in [(p.disc_loss, dl), (p.gen_loss, gl), (pm, gm)] {
            let (x, y) = (t.value(x).item().unwrap(), t.value(y).item().unwrap());
            prop_assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn joint_loss_is_linear() {
    let mut t = Tape::<f64>::new();
    let a = t.constant(Tensor::scalar(1.0));
    let s = t.constant(Tensor::scalar(2.0));
    let l = joint_loss(&mut t, a, s, DEFAULT_LAMBDA_SEG).unwrap();
    assert!((t.value(l).item().unwrap() - 1.2).abs() < 1e-15);
    let l0 = joint_loss(&mut t, a, s, 0.0).unwrap();
    assert_eq!(t.value(l0).item().unwrap(), 1.0);
}

#[test]
fn joint_loss_scales_segmentation_gradients() {
    let c = joint_gradient_check(5, DEFAULT_LAMBDA_SEG).unwrap();
    assert!(c.compared > 2_000_000);
    assert!((c.ratio - 0.10).abs() < 1e-6, "{c:?}");
    assert!(c.max_rel_dev < 1e-6, "{c:?}");
}

fn batch(n: usize, seed: u64) -> Tensor<f32> {
    let c = veil_corpus(n, 16, seed).unwrap();
    c.source_clean
}

#[test]
fn fresh_generator_is_the_identity() {
    let spec = ToyGanSpec::default();
    let (g, _) = spec.build::<f32>(&mut seeded_rng(1)).unwrap();
    let x = batch(3, 2);
    assert_eq!(translate(&spec, &g, &x).unwrap(), x);
    let tr = GeneratorTranslator { spec: spec.clone(), params: g.clone() };
    let img = tensor_to_images(&x).unwrap().remove(1);
    let out = tr.translate_image(&img).unwrap();
    let err = out.planes().iter().flatten().zip(img.planes().iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-7);
}

#[test]
fn translate_preserves_shape_order_and_range() {
    let spec = ToyGanSpec { identity_init: false, ..Default::default() };
    let (g, _) = spec.build::<f32>(&mut seeded_rng(4)).unwrap();
    let x = batch(4, 3);
    let all = translate(&spec, &g, &x).unwrap();
    assert_eq!(all.shape(), x.shape());
    assert!(all.data().iter().all(|v| (0.0..=1.0).contains(v)));
    for i in 0..4 {
        let one = translate(&spec, &g, &gather(&x, &[i])).unwrap();
        assert_eq!(one, gather(&all, &[i]));
    }
    assert_eq!(translate(&spec, &g, &x).unwrap(), all);
    let four = Tensor::<f32>::zeros(&[1, 4, 16, 16]);
    assert!(matches!(translate(&spec, &g, &four), Err(Error::Dimension(_))));
    let flat = Tensor::<f32>::zeros(&[3, 16, 16]);
    assert!(matches!(translate(&spec, &g, &flat), Err(Error::Dimension(_))));
    let gray = PlanarImage::new(16, 16, ColorSpace::Gray, vec![vec![0.5; 256]]).unwrap();
    assert!(GeneratorTranslator { spec, params: g }.translate_image(&gray).is_err());
}

#[test]
fn domain_pairs_are_validated() {
    let a = Tensor::<f32>::zeros(&[2, 3, 16, 16]);
    assert!(DomainPair::new(a.clone(), Tensor::zeros(&[2, 3, 8, 16])).is_err());
    assert!(DomainPair::new(a.clone(), Tensor::zeros(&[0, 3, 16, 16])).is_err());
    assert!(DomainPair::new(a.clone(), Tensor::zeros(&[5, 3, 16, 16])).is_ok());
}

fn config(steps: u64, seed: u64) -> GanConfig {
    GanConfig { steps, seed, ..Default::default() }
}

#[test]
fn seeded_runs_are_identical() {
    let c = veil_corpus(16, 16, 1).unwrap();
    let a = train_toy_gan(&c.pair, ToyGanSpec::default(), config(15, 9)).unwrap();
    let b = train_toy_gan(&c.pair, ToyGanSpec::default(), config(15, 9)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trainer, b.trainer);
    let other = train_toy_gan(&c.pair, ToyGanSpec::default(), config(15, 10)).unwrap();
    assert_ne!(a.trace, other.trace);
    assert_eq!(a.trace.len(), 15);
    assert_eq!(a.trace[14].step, 15);
}

#[test]
fn frozen_identity_generator_loses_to_the_discriminator() {
    let c = veil_corpus(32, 16, 2).unwrap();
    let cfg = GanConfig { freeze_generator: true, ..config(300, 3) };
    let run = train_toy_gan(&c.pair, ToyGanSpec::default(), cfg).unwrap();
    let (g0, _) = ToyGanSpec::default().build::<f32>(&mut seeded_rng(3)).unwrap();
    assert_eq!(run.trainer.generator, g0);
    let avg = |rows: &[GanTraceRow], f: fn(&GanTraceRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let (head, tail) = (&run.trace[..30], &run.trace[270..]);
    assert!(avg(tail, |r| r.disc_loss) < 0.5 * avg(head, |r| r.disc_loss));
    assert!(avg(tail, |r| r.d_fake) < 0.2, "{}", avg(tail, |r| r.d_fake));
    assert!(avg(tail, |r| r.d_fake) < avg(head, |r| r.d_fake));
}

#[test]
fn non_finite_losses_abort_with_the_trace() {
    let c = veil_corpus(8, 16, 3).unwrap();
    let mut source = c.pair.source.clone();
    let per = 3 * 16 * 16;
    source.data_mut()[5 * per] = f32::NAN;
    let pair = DomainPair::new(source, c.pair.target).unwrap();
    let cfg = GanConfig { batch: 1, ..config(200, 4) };
    let aborted = train_toy_gan(&pair, ToyGanSpec::default(), cfg).unwrap_err();
    match aborted.error {
        Error::Divergence { step, .. } => {
            assert!(step > 1, "sampled the bad image first; pick another seed");
            assert_eq!(aborted.trace.len() as u64, step - 1);
        }
        ref other => panic!("{other:?}"),
    }
    assert!(train_toy_gan(&pair, ToyGanSpec::default(), config(0, 1)).is_err());
}

#[test]
fn generator_weights_round_trip_through_named_entries() {
    let c = veil_corpus(8, 16, 3).unwrap();
    let run = train_toy_gan(&c.pair, ToyGanSpec::default(), config(5, 1)).unwrap();
    let t = &run.trainer;
    let mut entries = t.generator.to_named("gen.");
    entries.extend(t.discriminator.to_named("disc."));
    assert_eq!(t.spec.from_named(&entries, "gen.", true).unwrap(), t.generator);
    assert_eq!(t.spec.from_named(&entries, "disc.", false).unwrap(), t.discriminator);
    let wide = ToyGanSpec { gen_widths: [8, 32], ..Default::default() };
    match wide.from_named(&entries, "gen.", true) {
        Err(Error::CheckpointMismatch { layer, .. }) => assert_eq!(layer, "g.conv2.weight"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn trained_generator_removes_most_of_the_veil() {
    let c = veil_corpus(64, 16, 3).unwrap();
    let run = train_toy_gan(&c.pair, ToyGanSpec::default(), config(2000, 0)).unwrap();
    let base = mean_abs_error(&c.pair.source, &c.source_clean).unwrap();
    let out = translate(&run.trainer.spec, &run.trainer.generator, &c.pair.source).unwrap();
    let after = mean_abs_error(&out, &c.source_clean).unwrap();
    assert!(after <= 0.6 * base, "mae {after} vs {base}");
}
