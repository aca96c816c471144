use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new<T: Real>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Self> {
        let [n, c, h, w] = x.dims4()?;
        if k == 0 || stride == 0 {
            return Err(Error::Parameter("pool window and stride must be >= 1".into()));
        }
        if k > h || k > w {
            return Err(Error::dim(format!(
                "pool window {k} exceeds {h}x{w} input"
            )));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            k,
            stride,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.c, self.oh, self.ow]
    }
}

/// Returns pooled values and, per output, the flat input index of the
/// selected element. Ties resolve to the first element in row-major order.
pub(crate) fn max_forward<T: Real>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let planes = g.n * g.c;
    let mut out = Vec::with_capacity(planes * g.oh * g.ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for pl in 0..planes {
        let base = pl * g.h * g.w;
        for o_r in 0..g.oh {
            for o_c in 0..g.ow {
                let mut best = base + o_r * g.stride * g.w + o_c * g.stride;
                let mut best_v = x[best];
                for i in 0..g.k {
                    let row = base + (o_r * g.stride + i) * g.w + o_c * g.stride;
                    for j in 0..g.k {
                        let v = x[row + j];
                        if v > best_v {
                            best_v = v;
                            best = row + j;
                        }
                    }
                }
                out.push(best_v);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_backward<T: Real>(input_len: usize, arg: &[usize], gout: &[T]) -> Vec<T> {
    let mut gx = vec![T::zero(); input_len];
    for (&i, &g) in arg.iter().zip(gout) {
        gx[i] += g;
    }
    gx
}

pub(crate) fn avg_forward<T: Real>(g: &PoolGeom, x: &[T]) -> Vec<T> {
    let inv = T::one() / T::lit((g.k * g.k) as f64);
    let planes = g.n * g.c;
    let mut out = Vec::with_capacity(planes * g.oh * g.ow);
    for pl in 0..planes {
        let base = pl * g.h * g.w;
        for o_r in 0..g.oh {
            for o_c in 0..g.ow {
                let mut acc = T::zero();
                for i in 0..g.k {
                    let row = base + (o_r * g.stride + i) * g.w + o_c * g.stride;
                    for j in 0..g.k {
                        acc += x[row + j];
                    }
                }
                out.push(acc * inv);
            }
        }
    }
    out
}

pub(crate) fn avg_backward<T: Real>(g: &PoolGeom, gout: &[T]) -> Vec<T> {
    let inv = T::one() / T::lit((g.k * g.k) as f64);
    let mut gx = vec![T::zero(); g.n * g.c * g.h * g.w];
    for pl in 0..g.n * g.c {
        let base = pl * g.h * g.w;
        for o_r in 0..g.oh {
            for o_c in 0..g.ow {
                let gv = gout[(pl * g.oh + o_r) * g.ow + o_c] * inv;
                for i in 0..g.k {
                    let row = base + (o_r * g.stride + i) * g.w + o_c * g.stride;
                    for j in 0..g.k {
                        gx[row + j] += gv;
                    }
                }
            }
        }
    }
    gx
}
