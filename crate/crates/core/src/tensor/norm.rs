use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running mean/variance of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of train-mode batches folded into the running statistics.
    pub tracked: u64,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormStats<T> {
    /// Fresh statistics with the default `eps = 1e-5`, `momentum = 0.1`.
    pub fn new(channels: usize) -> Self {
        Self::with_hyper(channels, T::lit(0.1), T::lit(1e-5))
    }

    pub fn with_hyper(channels: usize, momentum: T, eps: T) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            tracked: 0,
            momentum,
            eps,
        }
    }
}

/// Saved intermediates for the backward pass.
pub(crate) struct BnSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mode: NormMode,
}

pub(crate) fn forward<T: Real>(
    dims: [usize; 4],
    x: &[T],
    gamma: &[T],
    beta: &[T],
    stats: &mut BatchNormStats<T>,
    mode: NormMode,
) -> Result<(Vec<T>, BnSaved<T>)> {
    let [n, c, h, w] = dims;
    if gamma.len() != c || beta.len() != c || stats.mean.len() != c {
        return Err(Error::dim(format!(
            "batch_norm2d: {c} channels but gamma/beta/stats sized {}/{}/{}",
            gamma.len(),
            beta.len(),
            stats.mean.len()
        )));
    }
    let hw = h * w;
    let count = n * hw;
    let (mean, var) = match mode {
        NormMode::Train => {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            let inv = T::one() / T::lit(count as f64);
            for ch in 0..c {
                let mut acc = T::zero();
                for b in 0..n {
                    acc += x[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                }
                let m = acc * inv;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &x[(b * c + ch) * hw..][..hw] {
                        sq += (v - m) * (v - m);
                    }
                }
                mean[ch] = m;
                var[ch] = sq * inv;
            }
            let mom = stats.momentum;
            let unbias = if count > 1 {
                T::lit(count as f64 / (count - 1) as f64)
            } else {
                T::one()
            };
            for ch in 0..c {
                stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * mean[ch];
                stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * var[ch] * unbias;
            }
            stats.tracked += 1;
            (mean, var)
        }
        NormMode::Eval => {
            if stats.tracked == 0 {
                return Err(Error::State(
                    "batch_norm2d in eval mode before any training step".into(),
                ));
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + stats.eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    Ok((out, BnSaved { xhat, inv_std, mode }))
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub(crate) fn backward<T: Real>(
    dims: [usize; 4],
    saved: &BnSaved<T>,
    gamma: &[T],
    gout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let count = T::lit((n * hw) as f64);
    let mut gx = vec![T::zero(); gout.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                sum_g += gout[i];
                sum_gx += gout[i] * saved.xhat[i];
            }
        }
        gg[ch] = sum_gx;
        gb[ch] = sum_g;
        let scale = gamma[ch] * saved.inv_std[ch];
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                gx[i] = match saved.mode {
                    NormMode::Train => {
                        scale * (gout[i] - sum_g / count - saved.xhat[i] * sum_gx / count)
                    }
                    NormMode::Eval => scale * gout[i],
                };
            }
        }
    }
    (gx, gg, gb)
}
