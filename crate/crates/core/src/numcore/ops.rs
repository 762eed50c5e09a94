//! Forward and backward kernels for the layer operations.
//!
//! Every kernel accumulates sequentially in row-major order so results are
//! bit-reproducible for a given input. The differentiable versions live in
//! [`super::tape`]; the free functions here are the plain forward maps.

use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Probability clamp used inside the cross-entropy.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new<T: Scalar>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (c_in, h, w) = input.chw()?;
        let [c_out, k_in, kh, kw] = kernel.shape()[..] else {
            return Err(Error::Dimension(format!(
                "conv2d kernel must be [C_out,C_in,kh,kw], got {:?}",
                kernel.shape()
            )));
        };
        if k_in != c_in {
            return Err(Error::Dimension(format!(
                "conv2d channel axis: input has {c_in} channels, kernel expects {k_in}"
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Dimension(format!(
                "conv2d bias axis: expected [{c_out}], got {:?}",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Dimension("conv2d stride must be >= 1".into()));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::Dimension(format!(
                "conv2d spatial axes: kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Output index range along one axis whose tap `k` lands inside `[0, n)`.
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // o*s + off >= 0  and  o*s + off <= n-1
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = n as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let hi = hi.min(out as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    bias: &[T],
) -> Vec<T> {
    let plane = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.c_out * plane];
    for co in 0..g.c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..g.c_in {
            let x = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ky, g.h, g.out_h);
                for kx in 0..g.kw {
                    let wv = kernel[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    let (ox0, ox1) = g.valid_range(kx, g.w, g.out_w);
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &x[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.out_w..(oy + 1) * g.out_w];
                        if g.stride == 1 {
                            let ix0 = ox0 + kx - g.pad;
                            for (ov, &xv) in orow[ox0..ox1].iter_mut().zip(&row[ix0..]) {
                                *ov = *ov + wv * xv;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                orow[ox] = orow[ox] + wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel, grad_bias)`; entries are computed only
/// when the corresponding flag is set.
pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    need: [bool; 3],
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane = g.out_h * g.out_w;
    let mut gi = need[0].then(|| vec![T::zero(); input.len()]);
    let mut gk = need[1].then(|| vec![T::zero(); kernel.len()]);
    let gb = need[2].then(|| {
        (0..g.c_out)
            .map(|co| grad_out[co * plane..(co + 1) * plane].iter().copied().sum())
            .collect()
    });
    if gi.is_none() && gk.is_none() {
        return (gi, gk, gb);
    }
    for co in 0..g.c_out {
        let go = &grad_out[co * plane..(co + 1) * plane];
        for ci in 0..g.c_in {
            let xoff = ci * g.h * g.w;
            for ky in 0..g.kh {
                let (oy0, oy1) = g.valid_range(ky, g.h, g.out_h);
                for kx in 0..g.kw {
                    let kidx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = kernel[kidx];
                    let (ox0, ox1) = g.valid_range(kx, g.w, g.out_w);
                    let mut acc = T::zero();
                    for oy in oy0..oy1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * g.out_w + ox0..oy * g.out_w + ox1];
                        let base = xoff + iy * g.w;
                        if g.stride == 1 {
                            let ix0 = base + ox0 + kx - g.pad;
                            let ix1 = ix0 + grow.len();
                            if gk.is_some() {
                                acc = grow
                                    .iter()
                                    .zip(&input[ix0..ix1])
                                    .fold(acc, |a, (&gv, &xv)| a + gv * xv);
                            }
                            if let Some(gi) = gi.as_mut() {
                                for (d, &gv) in gi[ix0..ix1].iter_mut().zip(grow) {
                                    *d = *d + wv * gv;
                                }
                            }
                        } else {
                            for (j, &gv) in grow.iter().enumerate() {
                                let ix = base + (ox0 + j) * g.stride + kx - g.pad;
                                acc = acc + gv * input[ix];
                                if let Some(gi) = gi.as_mut() {
                                    gi[ix] = gi[ix] + wv * gv;
                                }
                            }
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[kidx] = gk[kidx] + acc;
                    }
                }
            }
        }
    }
    (gi, gk, gb)
}

/// Cross-correlation of a `[C_in,H,W]` input with a `[C_out,C_in,kh,kw]` kernel.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(input, kernel, bias, stride, pad)?;
    let out = conv2d_forward(&g, input.data(), kernel.data(), bias.data());
    Tensor::new(vec![g.c_out, g.out_h, g.out_w], out)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) struct PoolGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize, stride: usize) -> Result<Self> {
        let (c, h, w) = x.chw()?;
        if kh == 0 || kw == 0 || stride == 0 {
            return Err(Error::Dimension("maxpool window and stride must be >= 1".into()));
        }
        if kh > h || kw > w {
            return Err(Error::Dimension(format!(
                "maxpool window {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        Ok(PoolGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            out_h: (h - kh) / stride + 1,
            out_w: (w - kw) / stride + 1,
        })
    }
}

/// Max pooling; also returns the flat input index of each window's maximum
/// (first occurrence in row-major order on ties).
pub(crate) fn maxpool_forward<T: Scalar>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let n = g.c * g.out_h * g.out_w;
    let mut out = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for c in 0..g.c {
        let base = c * g.h * g.w;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best = base + oy * g.stride * g.w + ox * g.stride;
                for dy in 0..g.kh {
                    for dx in 0..g.kw {
                        let idx = base + (oy * g.stride + dy) * g.w + ox * g.stride + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2d<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize) -> Result<Tensor<T>> {
    maxpool2d_window(x, k, k, stride)
}

/// Max pooling with a rectangular `kh x kw` window.
pub fn maxpool2d_window<T: Scalar>(x: &Tensor<T>, kh: usize, kw: usize, stride: usize) -> Result<Tensor<T>> {
    let g = PoolGeom::new(x, kh, kw, stride)?;
    let (out, _) = maxpool_forward(&g, x.data());
    Tensor::new(vec![g.c, g.out_h, g.out_w], out)
}

/// Per-channel spatial mean of a `[K,h,w]` tensor.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, h, w) = x.chw()?;
    if h == 0 || w == 0 {
        return Err(Error::Dimension("global_avg_pool on empty spatial extent".into()));
    }
    let plane = h * w;
    let denom = T::from_f64(plane as f64);
    let out = (0..k)
        .map(|c| x.data()[c * plane..(c + 1) * plane].iter().copied().sum::<T>() / denom)
        .collect();
    Ok(Tensor::from_vec(out))
}

pub(crate) fn fc_check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    let [c, d] = w.shape()[..] else {
        return Err(Error::Dimension(format!(
            "fully_connected weight must be [C,D], got {:?}",
            w.shape()
        )));
    };
    if x.len() != d || x.ndim() != 1 {
        return Err(Error::Dimension(format!(
            "fully_connected input axis: weight expects {d}, input shape {:?}",
            x.shape()
        )));
    }
    if b.shape() != [c] {
        return Err(Error::Dimension(format!(
            "fully_connected bias axis: expected [{c}], got {:?}",
            b.shape()
        )));
    }
    Ok((c, d))
}

/// `weight · x + bias`.
pub fn fully_connected<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, d) = fc_check(x, weight, bias)?;
    let xs = x.data();
    let out = (0..c)
        .map(|i| {
            let row = &weight.data()[i * d..(i + 1) * d];
            row.iter().zip(xs).fold(bias.data()[i], |acc, (&a, &b)| acc + a * b)
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

/// Logistic function, kept strictly inside (0, 1).
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / T::from_f64(2.0);
    s.max(T::min_positive_value()).min(hi)
}

pub fn sigmoid_normalize<T: Scalar>(p: &Tensor<T>) -> Tensor<T> {
    p.map(sigmoid)
}

pub(crate) fn check_labels<T: Scalar>(labels: &[T]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&l| l != T::zero() && l != T::one()) {
        return Err(Error::Validation(format!(
            "label {:?} outside {{0,1}}",
            bad.as_f64()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy between probabilities and {0,1} labels.
pub fn bce_loss<T: Scalar>(p_norm: &Tensor<T>, labels: &Tensor<T>) -> Result<T> {
    if p_norm.len() != labels.len() || p_norm.is_empty() {
        return Err(Error::Dimension(format!(
            "bce_loss: {} probabilities vs {} labels",
            p_norm.len(),
            labels.len()
        )));
    }
    check_labels(labels.data())?;
    Ok(bce_value(p_norm.data(), labels.data()))
}

pub(crate) fn bce_value<T: Scalar>(p: &[T], l: &[T]) -> T {
    let eps = T::from_f64(BCE_EPSILON);
    let one = T::one();
    let total = p.iter().zip(l).fold(T::zero(), |acc, (&p, &l)| {
        let pc = p.max(eps).min(one - eps);
        acc - (l * pc.ln() + (one - l) * (one - pc).ln())
    });
    total / T::from_f64(p.len() as f64)
}

/// Gradient of [`bce_value`] with respect to the probabilities; the clamp is
/// passed straight through.
pub(crate) fn bce_grad<T: Scalar>(p: &[T], l: &[T], upstream: T) -> Vec<T> {
    let eps = T::from_f64(BCE_EPSILON);
    let one = T::one();
    let n = T::from_f64(p.len() as f64);
    p.iter()
        .zip(l)
        .map(|(&p, &l)| {
            let pc = p.max(eps).min(one - eps);
            upstream * (-(l / pc) + (one - l) / (one - pc)) / n
        })
        .collect()
}
