//! Convolution kernels (im2col + row-major GEMM).
//!
//! Every output element of [`conv2d_forward`] starts at the bias and then adds
//! `w * x` for each tap in `(c, ki, kj)` lexicographic order, which is the
//! same summation order as a textbook nested-loop convolution.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Stride, padding and dilation of a 2-D convolution, per `(row, column)` axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl Conv2dParams {
    pub fn square(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
            dilation: (dilation, dilation),
        }
    }
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self::square(1, 0, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvTransposeParams {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

/// Sliding-window geometry. `(c, h, w)` is the dense image side, `(oh, ow)`
/// the window grid side.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub dh: usize,
    pub dw: usize,
    pub oh: usize,
    pub ow: usize,
}

fn out_len(input: usize, pad: usize, dil: usize, k: usize, stride: usize) -> Option<usize> {
    let span = dil * (k - 1) + 1;
    let padded = input + 2 * pad;
    if padded < span || stride == 0 {
        None
    } else {
        Some((padded - span) / stride + 1)
    }
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of window indices whose tap at offset `tap` lands inside `[0, len)`.
    fn valid_range(
        out: usize,
        stride: usize,
        tap: usize,
        pad: usize,
        len: usize,
    ) -> std::ops::Range<usize> {
        // position = o * stride + tap - pad
        let lo = if tap >= pad {
            0
        } else {
            (pad - tap).div_ceil(stride)
        };
        let hi = if tap >= len + pad {
            0
        } else {
            // o * stride + tap - pad < len  <=>  o < (len + pad - tap) / stride
            (len + pad - tap).div_ceil(stride).min(out)
        };
        lo.min(hi)..hi
    }

    fn row_ranges(&self, ki: usize, kj: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (
            Self::valid_range(self.oh, self.sh, ki * self.dh, self.ph, self.h),
            Self::valid_range(self.ow, self.sw, kj * self.dw, self.pw, self.w),
        )
    }

    /// For every im2col row, whether any window position touches the image.
    fn live_rows(&self) -> Vec<bool> {
        let mut live = Vec::with_capacity(self.rows());
        for _ in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let (r, c) = self.row_ranges(ki, kj);
                    live.push(!r.is_empty() && !c.is_empty());
                }
            }
        }
        live
    }
}

fn im2col<T: Real>(g: &Geom, img: &[T], cols: &mut [T]) {
    let p = g.cols();
    let khw = g.kh * g.kw;
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut cols[(c * khw + ki * g.kw + kj) * p..][..p];
                row.fill(T::zero());
                let (rr, cr) = g.row_ranges(ki, kj);
                if cr.is_empty() {
                    continue;
                }
                for o_r in rr {
                    let ih = o_r * g.sh + ki * g.dh - g.ph;
                    let src = &plane[ih * g.w..(ih + 1) * g.w];
                    let dst = &mut row[o_r * g.ow..(o_r + 1) * g.ow];
                    if g.sw == 1 {
                        let start = cr.start + kj * g.dw - g.pw;
                        dst[cr.clone()].copy_from_slice(&src[start..start + cr.len()]);
                    } else {
                        for o_c in cr.clone() {
                            dst[o_c] = src[o_c * g.sw + kj * g.dw - g.pw];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of `cols` back into the image layout (adjoint of [`im2col`]).
fn col2im<T: Real>(g: &Geom, cols: &[T], img: &mut [T]) {
    let p = g.cols();
    let khw = g.kh * g.kw;
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &cols[(c * khw + ki * g.kw + kj) * p..][..p];
                let (rr, cr) = g.row_ranges(ki, kj);
                for o_r in rr {
                    let ih = o_r * g.sh + ki * g.dh - g.ph;
                    let dst = &mut plane[ih * g.w..(ih + 1) * g.w];
                    let src = &row[o_r * g.ow..(o_r + 1) * g.ow];
                    for o_c in cr.clone() {
                        dst[o_c * g.sw + kj * g.dw - g.pw] += src[o_c];
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `out[m x p] += a[m x k] * b[k x p]`, each output element accumulating in
/// ascending `kk` order. Rows `kk` with `live[kk] == false` are skipped.
fn gemm_acc<T: Real>(out: &mut [T], a: &[T], b: &[T], (m, k, p): (usize, usize, usize), live: Option<&[bool]>) {
    let ks: Vec<usize> = (0..k).filter(|&kk| live.is_none_or(|l| l[kk])).collect();
    let mut rows = out[..m * p].chunks_exact_mut(4 * p);
    let mut i = 0;
    for block in &mut rows {
        let (o0, rest) = block.split_at_mut(p);
        let (o1, rest) = rest.split_at_mut(p);
        let (o2, o3) = rest.split_at_mut(p);
        for &kk in &ks {
            let br = &b[kk * p..(kk + 1) * p];
            let (a0, a1, a2, a3) = (a[i * k + kk], a[(i + 1) * k + kk], a[(i + 2) * k + kk], a[(i + 3) * k + kk]);
            for ((((v, x0), x1), x2), x3) in br.iter().zip(o0.iter_mut()).zip(o1.iter_mut()).zip(o2.iter_mut()).zip(o3.iter_mut()) {
                *x0 += a0 * *v;
                *x1 += a1 * *v;
                *x2 += a2 * *v;
                *x3 += a3 * *v;
            }
        }
        i += 4;
    }
    for row in rows.into_remainder().chunks_exact_mut(p) {
        for &kk in &ks {
            axpy(row, a[i * k + kk], &b[kk * p..(kk + 1) * p]);
        }
        i += 1;
    }
}

fn transpose<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

pub(crate) struct ConvShapes {
    pub n: usize,
    pub f: usize,
    pub geom: Geom,
}

pub(crate) fn conv2d_shapes<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &Conv2dParams,
) -> Result<ConvShapes> {
    let [n, c, h, wd] = x.dims4()?;
    let [f, wc, kh, kw] = w.dims4()?;
    if wc != c {
        return Err(Error::dim(format!(
            "conv2d: input has {c} channels but weight expects {wc}"
        )));
    }
    if let Some(b) = bias {
        if b.numel() != f {
            return Err(Error::dim(format!(
                "conv2d: bias has {} entries for {f} filters",
                b.numel()
            )));
        }
    }
    if p.dilation.0 == 0 || p.dilation.1 == 0 {
        return Err(Error::Parameter("conv2d: dilation must be >= 1".into()));
    }
    let oh = out_len(h, p.padding.0, p.dilation.0, kh, p.stride.0);
    let ow = out_len(wd, p.padding.1, p.dilation.1, kw, p.stride.1);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::dim(format!(
            "conv2d: {kh}x{kw} kernel (dilation {:?}, padding {:?}, stride {:?}) does not fit {h}x{wd} input",
            p.dilation, p.padding, p.stride
        )));
    };
    Ok(ConvShapes {
        n,
        f,
        geom: Geom {
            c,
            h,
            w: wd,
            kh,
            kw,
            sh: p.stride.0,
            sw: p.stride.1,
            ph: p.padding.0,
            pw: p.padding.1,
            dh: p.dilation.0,
            dw: p.dilation.1,
            oh,
            ow,
        },
    })
}

pub(crate) fn conv2d_forward<T: Real>(
    s: &ConvShapes,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let g = &s.geom;
    let (k, p) = (g.rows(), g.cols());
    let live = g.live_rows();
    let mut cols = vec![T::zero(); k * p];
    let mut out = vec![T::zero(); s.n * s.f * p];
    let in_stride = g.c * g.h * g.w;
    for n in 0..s.n {
        im2col(g, &x[n * in_stride..(n + 1) * in_stride], &mut cols);
        let dst = &mut out[n * s.f * p..(n + 1) * s.f * p];
        for f in 0..s.f {
            dst[f * p..(f + 1) * p].fill(bias.map_or(T::zero(), |b| b[f]));
        }
        gemm_acc(dst, w, &cols, (s.f, k, p), Some(&live));
    }
    out
}

/// Gradients of conv2d w.r.t. input, weight and bias.
pub(crate) fn conv2d_backward<T: Real>(
    s: &ConvShapes,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let g = &s.geom;
    let (k, p) = (g.rows(), g.cols());
    let in_stride = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); k * p];
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = need_w.then(|| vec![T::zero(); w.len()]);
    let mut gb = vec![T::zero(); s.f];
    let w_t = need_x.then(|| transpose(w, s.f, k));
    for n in 0..s.n {
        let gn = &gout[n * s.f * p..(n + 1) * s.f * p];
        for f in 0..s.f {
            gb[f] += gn[f * p..(f + 1) * p].iter().copied().sum::<T>();
        }
        if let Some(gw) = gw.as_mut() {
            im2col(g, &x[n * in_stride..(n + 1) * in_stride], &mut cols);
            let cols_t = transpose(&cols, k, p);
            gemm_acc(gw, gn, &cols_t, (s.f, p, k), None);
        }
        if let Some(gx) = gx.as_mut() {
            cols.fill(T::zero());
            gemm_acc(&mut cols, w_t.as_ref().expect("computed when needed"), gn, (k, s.f, p), None);
            col2im(g, &cols, &mut gx[n * in_stride..(n + 1) * in_stride]);
        }
    }
    (gx, gw, gb)
}

pub(crate) fn conv_transpose_shapes<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &ConvTransposeParams,
) -> Result<ConvShapes> {
    let [n, c, h, wd] = x.dims4()?;
    let [wc, f, kh, kw] = w.dims4()?;
    if wc != c {
        return Err(Error::dim(format!(
            "conv_transpose2d: input has {c} channels but weight expects {wc}"
        )));
    }
    if p.stride == 0 || p.output_padding >= p.stride {
        return Err(Error::Parameter(format!(
            "conv_transpose2d: output_padding {} must be smaller than stride {}",
            p.output_padding, p.stride
        )));
    }
    if let Some(b) = bias {
        if b.numel() != f {
            return Err(Error::dim(format!(
                "conv_transpose2d: bias has {} entries for {f} output channels",
                b.numel()
            )));
        }
    }
    let full_h = (h - 1) * p.stride + kh + p.output_padding;
    let full_w = (wd - 1) * p.stride + kw + p.output_padding;
    if full_h <= 2 * p.padding || full_w <= 2 * p.padding {
        return Err(Error::dim(format!(
            "conv_transpose2d: padding {} consumes the whole {h}x{wd} output",
            p.padding
        )));
    }
    Ok(ConvShapes {
        n,
        f,
        geom: Geom {
            c: f,
            h: full_h - 2 * p.padding,
            w: full_w - 2 * p.padding,
            kh,
            kw,
            sh: p.stride,
            sw: p.stride,
            ph: p.padding,
            pw: p.padding,
            dh: 1,
            dw: 1,
            oh: h,
            ow: wd,
        },
    })
}

/// `x` is `[N, C, oh, ow]`, `w` is `[C, F*kh*kw]`; output `[N, F, h, w]`.
pub(crate) fn conv_transpose_forward<T: Real>(
    s: &ConvShapes,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let g = &s.geom;
    let (k, p) = (g.rows(), g.cols());
    let in_ch = x.len() / (s.n * p);
    let img = g.c * g.h * g.w;
    let hw = g.h * g.w;
    let mut cols = vec![T::zero(); k * p];
    let mut out = vec![T::zero(); s.n * img];
    let w_t = transpose(w, in_ch, k);
    for n in 0..s.n {
        let xn = &x[n * in_ch * p..(n + 1) * in_ch * p];
        cols.fill(T::zero());
        gemm_acc(&mut cols, &w_t, xn, (k, in_ch, p), None);
        let on = &mut out[n * img..(n + 1) * img];
        if let Some(b) = bias {
            for (f, &bv) in b.iter().enumerate() {
                on[f * hw..(f + 1) * hw].fill(bv);
            }
        }
        col2im(g, &cols, on);
    }
    out
}

pub(crate) fn conv_transpose_backward<T: Real>(
    s: &ConvShapes,
    x: &[T],
    w: &[T],
    gout: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let g = &s.geom;
    let (k, p) = (g.rows(), g.cols());
    let in_ch = x.len() / (s.n * p);
    let img = g.c * g.h * g.w;
    let hw = g.h * g.w;
    let live = g.live_rows();
    let mut cols = vec![T::zero(); k * p];
    let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
    let mut gw = need_w.then(|| vec![T::zero(); w.len()]);
    let mut gb = vec![T::zero(); g.c];
    for n in 0..s.n {
        let gn = &gout[n * img..(n + 1) * img];
        for f in 0..g.c {
            gb[f] += gn[f * hw..(f + 1) * hw].iter().copied().sum::<T>();
        }
        if gx.is_none() && gw.is_none() {
            continue;
        }
        im2col(g, gn, &mut cols);
        let xn = &x[n * in_ch * p..(n + 1) * in_ch * p];
        if let Some(gx) = gx.as_mut() {
            let gxn = &mut gx[n * in_ch * p..(n + 1) * in_ch * p];
            gemm_acc(gxn, w, &cols, (in_ch, k, p), Some(&live));
        }
        if let Some(gw) = gw.as_mut() {
            gemm_acc(gw, xn, &transpose(&cols, k, p), (in_ch, p, k), None);
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for out in 1..6 {
            for stride in 1..4 {
                for tap in 0..7 {
                    for pad in 0..5 {
                        for len in 1..8 {
                            let expect: Vec<usize> = (0..out)
                                .filter(|&o| {
                                    let pos = (o * stride + tap) as isize - pad as isize;
                                    pos >= 0 && (pos as usize) < len
                                })
                                .collect();
                            let got: Vec<usize> =
                                Geom::valid_range(out, stride, tap, pad, len).collect();
                            assert_eq!(got, expect, "out={out} s={stride} tap={tap} pad={pad} len={len}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = Geom {
            c: 2,
            h: 5,
            w: 6,
            kh: 3,
            kw: 2,
            sh: 2,
            sw: 1,
            ph: 1,
            pw: 1,
            dh: 1,
            dw: 2,
            oh: 3,
            ow: 5,
        };
        let img: Vec<f64> = (0..g.c * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols_probe: Vec<f64> = (0..g.rows() * g.cols())
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let mut cols = vec![0.0; cols_probe.len()];
        im2col(&g, &img, &mut cols);
        let mut back = vec![0.0; img.len()];
        col2im(&g, &cols_probe, &mut back);
        let lhs: f64 = cols.iter().zip(&cols_probe).map(|(a, b)| a * b).sum();
        let rhs: f64 = img.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
