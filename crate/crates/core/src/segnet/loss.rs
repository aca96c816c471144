use crate::dataio::{ClassStats, LabelTensor, IGNORE};
use crate::error::{Error, Result};
use crate::tensor::{Real, Reduction, Tape, Var};

/// Default class-weight constant.
pub const DEFAULT_C: f64 = 1.10;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub c: f64,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
            c: f64::NAN,
        }
    }
}

/// `w = 1 / ln(c + p)` per class.
pub fn class_weights(stats: &ClassStats, c: f64) -> Result<ClassWeights> {
    if !(c > 0.0) {
        return Err(Error::Parameter(format!("class-weight constant c = {c} must be positive")));
    }
    let p = stats
        .probabilities()
        .ok_or_else(|| Error::Parameter("class statistics are empty; weights undefined".into()))?;
    let weights = p
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            if c + p <= 1.0 {
                return Err(Error::Parameter(format!(
                    "class {k}: c + p = {} leaves ln(c + p) non-positive",
                    c + p
                )));
            }
            Ok(1.0 / (c + p).ln())
        })
        .collect::<Result<_>>()?;
    Ok(ClassWeights { weights, c })
}

#[derive(Clone, Copy, Debug)]
pub struct SegLoss {
    pub loss: Var,
    pub scored_pixels: usize,
    /// No pixel was scored; the loss is 0 and carries no gradient signal.
    pub empty: bool,
}

/// Weighted per-pixel softmax cross-entropy over `[N, K, H, W]` logits.
pub fn seg_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &LabelTensor,
    weights: &ClassWeights,
    reduction: Reduction,
) -> Result<SegLoss> {
    let [n, _, h, w] = tape.value(logits).dims4()?;
    if labels.shape() != [n, h, w] {
        return Err(Error::dim(format!(
            "labels {:?} do not match logits {:?}",
            labels.shape(),
            [n, h, w]
        )));
    }
    let wt: Vec<T> = weights.weights.iter().map(|&v| T::lit(v)).collect();
    let (loss, scored) = tape.cross_entropy(logits, &labels.ids, &wt, IGNORE, reduction)?;
    if scored == 0 && cfg!(debug_assertions) {
        eprintln!("warning: segmentation batch has no scored pixels");
    }
    Ok(SegLoss {
        loss,
        scored_pixels: scored,
        empty: scored == 0,
    })
}
