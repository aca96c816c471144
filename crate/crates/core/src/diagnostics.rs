//! Finite-difference checks of every differentiable primitive, run as a
//! suite from the command line and the acceptance tests.

use crate::dataio::{LabelTensor, IGNORE};
use crate::error::{Error, Result};
use crate::gan::{adv_loss, GenLossForm};
use crate::segnet::{seg_loss, ClassWeights};
use crate::tensor::{
    gradcheck, seeded_rng, splitmix_seed, BatchNormStats, Conv2dParams, ConvTransposeParams, NormMode, Reduction,
    Rng, Tape, Tensor, Var,
};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-6;

/// Suite rows, in report order.
pub const PRIMITIVES: [&str; 12] = [
    "conv2d",
    "conv_transpose2d",
    "max_pool2d",
    "avg_pool2d",
    "batch_norm2d_train",
    "batch_norm2d_eval",
    "relu",
    "softmax",
    "sigmoid",
    "softplus",
    "seg_loss",
    "adv_loss",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub elements: usize,
    pub max_rel_err: f64,
    pub passed: bool,
    pub error: Option<String>,
}

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Magnitudes in `[0.1, 1]`: no element sits within a step of the relu kink.
fn off_kink(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) { m } else { -m }
    })
}

/// Distinct values 0.01 apart, shuffled, so no pooling window has a near tie.
fn tie_free(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).expect("sized")
}

/// Dots `y` with a fixed random tensor so every element reaches the loss.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let r = uniform(t.shape(y), &mut seeded_rng(seed));
    let r = t.constant(r);
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn case(name: &str, seed: u64) -> (CaseFn, Vec<Tensor<f64>>) {
    let rng = &mut seeded_rng(seed);
    let ps = splitmix_seed(seed, 1);
    match name {
        "conv2d" => (
            Box::new(move |t, v| {
                let p = Conv2dParams { stride: (2, 1), padding: (1, 2), dilation: (1, 2) };
                let y = t.conv2d(v[0], v[1], Some(v[2]), &p)?;
                project(t, y, ps)
            }),
            vec![uniform(&[2, 3, 6, 7], rng), uniform(&[4, 3, 3, 3], rng), uniform(&[4], rng)],
        ),
        "conv_transpose2d" => (
            Box::new(move |t, v| {
                let p = ConvTransposeParams { stride: 2, padding: 1, output_padding: 1 };
                let y = t.conv_transpose2d(v[0], v[1], Some(v[2]), &p)?;
                project(t, y, ps)
            }),
            vec![uniform(&[2, 3, 4, 5], rng), uniform(&[3, 2, 3, 3], rng), uniform(&[2], rng)],
        ),
        "max_pool2d" => (
            Box::new(move |t, v| {
                let y = t.max_pool2d(v[0], 2, 2)?;
                project(t, y, ps)
            }),
            vec![tie_free(&[2, 2, 6, 6], rng)],
        ),
        "avg_pool2d" => (
            Box::new(move |t, v| {
                let y = t.avg_pool2d(v[0], 2, 2)?;
                project(t, y, ps)
            }),
            vec![uniform(&[2, 2, 6, 6], rng)],
        ),
        "batch_norm2d_train" => (
            Box::new(move |t, v| {
                let mut stats = BatchNormStats::new(3);
                let y = t.batch_norm2d(v[0], v[1], v[2], &mut stats, NormMode::Train)?;
                project(t, y, ps)
            }),
            vec![uniform(&[2, 3, 4, 4], rng), uniform(&[3], rng), uniform(&[3], rng)],
        ),
        "batch_norm2d_eval" => (
            Box::new(move |t, v| {
                let mut stats = BatchNormStats::new(3);
                stats.mean = vec![0.1, -0.2, 0.05];
                stats.var = vec![0.9, 1.3, 0.4];
                stats.tracked = 1;
                let y = t.batch_norm2d(v[0], v[1], v[2], &mut stats, NormMode::Eval)?;
                project(t, y, ps)
            }),
            vec![uniform(&[2, 3, 4, 4], rng), uniform(&[3], rng), uniform(&[3], rng)],
        ),
        "relu" => (
            Box::new(move |t, v| {
                let y = t.relu(v[0]);
                project(t, y, ps)
            }),
            vec![off_kink(&[2, 3, 4, 4], rng)],
        ),
        "softmax" => (
            Box::new(move |t, v| {
                let y = t.softmax_channel(v[0])?;
                project(t, y, ps)
            }),
            vec![uniform(&[2, 5, 3, 3], rng)],
        ),
        "sigmoid" => (
            Box::new(move |t, v| {
                let y = t.sigmoid(v[0]);
                project(t, y, ps)
            }),
            vec![uniform(&[2, 3, 3, 3], rng)],
        ),
        "softplus" => (
            Box::new(move |t, v| {
                let y = t.softplus(v[0]);
                project(t, y, ps)
            }),
            vec![uniform(&[2, 3, 3, 3], rng)],
        ),
        "seg_loss" => {
            let ids: Vec<u8> = (0..2 * 3 * 3)
                .map(|i| if i % 7 == 3 { IGNORE } else { rng.gen_range(0..5) })
                .collect();
            let labels = LabelTensor { n: 2, height: 3, width: 3, ids };
            let weights = ClassWeights {
                weights: (0..5).map(|_| rng.gen_range(1.0..10.0)).collect(),
                c: 1.10,
            };
            (
                Box::new(move |t, v| Ok(seg_loss(t, v[0], &labels, &weights, Reduction::Mean)?.loss)),
                vec![uniform(&[2, 5, 3, 3], rng)],
            )
        }
        "adv_loss" => {
            let probs = |rng: &mut Rng| Tensor::from_fn(&[4], |_| rng.gen_range(0.05..0.95));
            (
                Box::new(move |t, v| {
                    let ns = adv_loss(t, v[0], v[1], GenLossForm::NonSaturating)?;
                    let mm = adv_loss(t, v[0], v[1], GenLossForm::Minimax)?;
                    let a = t.add(ns.disc_loss, ns.gen_loss)?;
                    let b = t.scale(mm.gen_loss, 0.5);
                    t.add(a, b)
                }),
                vec![probs(rng), probs(rng)],
            )
        }
        _ => unreachable!("unknown primitive {name}"),
    }
}

/// Runs the suite, or the single primitive named by `scope`.
///
/// `fault` names a primitive whose gradient is deliberately scaled by 1.5
/// on the way back; it exists so the failure path itself can be tested.
pub fn run_gradcheck_suite(scope: Option<&str>, seed: u64, fault: Option<&str>) -> Result<Vec<CaseReport>> {
    let known = |s: &str| PRIMITIVES.contains(&s);
    for s in scope.into_iter().chain(fault) {
        if !known(s) {
            return Err(Error::Usage(format!(
                "unknown primitive `{s}`; expected one of {}",
                PRIMITIVES.join(", ")
            )));
        }
    }
    Ok(PRIMITIVES
        .iter()
        .enumerate()
        .filter(|(_, n)| scope.is_none_or(|s| s == **n))
        .map(|(i, &name)| {
            let (f, inputs) = case(name, splitmix_seed(seed, i as u64));
            let broken = fault == Some(name);
            let report = gradcheck(
                |t, v| {
                    let y = f(t, v)?;
                    if !broken {
                        return Ok(y);
                    }
                    let value = t.value(y).clone();
                    Ok(t.custom(&[y], value, |_, _, g| vec![g.iter().map(|x| x * 1.5).collect()]))
                },
                &inputs,
                GRADCHECK_EPS,
                GRADCHECK_TOL,
            );
            CaseReport {
                name,
                elements: report.entries.len(),
                max_rel_err: report.max_rel_err,
                passed: report.passed,
                error: report.error,
            }
        })
        .collect())
}

pub fn format_suite(rows: &[CaseReport]) -> String {
    let mut out = format!("{:<20} {:>8} {:>12}  result\n", "primitive", "elements", "max rel err");
    for r in rows {
        let verdict = match (&r.error, r.passed) {
            (Some(e), _) => format!("ERROR {e}"),
            (None, true) => "pass".into(),
            (None, false) => "FAIL".into(),
        };
        out.push_str(&format!("{:<20} {:>8} {:>12.3e}  {verdict}\n", r.name, r.elements, r.max_rel_err));
    }
    out
}
