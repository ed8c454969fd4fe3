//! Image resampling with the half-pixel-center convention: output pixel `o`
//! maps to source coordinate `(o + 0.5) * in / out - 0.5`.
//!
//! Bilinear clamps that coordinate into `[0, in - 1]`; bicubic (Keys kernel,
//! a = -0.5) clamps each of its four tap indices into range. Both evaluate as
//! `anchor + sum(w * (x - anchor))`, so constant inputs come back bit-exact.

use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::tensor::{dims4, Float, Tensor};

pub const BICUBIC_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    Bilinear,
    Bicubic,
}

/// Keys cubic convolution kernel.
pub fn cubic_weight(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

fn source_coord(o: usize, in_len: usize, out_len: usize) -> f64 {
    (o as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5
}

/// Per-output-index linear taps (i0, i1, t).
fn linear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let s = source_coord(o, in_len, out_len).clamp(0.0, (in_len - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Per-output-index cubic taps: indices (clamped) and weights; index 1 is the anchor.
fn cubic_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..out_len)
        .map(|o| {
            let s = source_coord(o, in_len, out_len);
            let f = s.floor();
            let t = s - f;
            let base = f as isize;
            let mut idx = [0usize; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                idx[k] = (base + k as isize - 1).clamp(0, in_len as isize - 1) as usize;
                w[k] = cubic_weight(t - (k as f64 - 1.0), BICUBIC_A);
            }
            (idx, w)
        })
        .collect()
}

fn check_target(oh: usize, ow: usize) -> Result<()> {
    ensure_dim!(oh >= 1 && ow >= 1, "resample: target size {oh}x{ow} must be positive");
    Ok(())
}

fn bilinear_data<T: Float>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for plane in x.chunks(h * w) {
        for &(y0, y1, fy) in &ty {
            let fy = T::lit(fy);
            for &(x0, x1, fx) in &tx {
                let fx = T::lit(fx);
                let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                let (c, d) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                let top = a + fx * (b - a);
                let bottom = c + fx * (d - c);
                out.push(top + fy * (bottom - top));
            }
        }
    }
    out
}

/// Forward-only bilinear resize to an explicit size.
pub fn bilinear_resize<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(x.shape())?;
    check_target(oh, ow)?;
    Tensor::new(vec![n, c, oh, ow], bilinear_data(x.data(), n * c, h, w, oh, ow))
}

/// Forward-only bicubic resize to an explicit size (no output clamping).
pub fn bicubic_resize<T: Float>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(x.shape())?;
    check_target(oh, ow)?;
    let ty = cubic_taps(h, oh);
    let tx = cubic_taps(w, ow);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut rows = vec![T::zero(); h * ow];
    for plane in x.data().chunks(h * w) {
        for y in 0..h {
            for (ox, (idx, wt)) in tx.iter().enumerate() {
                let anchor = plane[y * w + idx[1]];
                let mut acc = T::zero();
                for k in 0..4 {
                    acc += T::lit(wt[k]) * (plane[y * w + idx[k]] - anchor);
                }
                rows[y * ow + ox] = anchor + acc;
            }
        }
        for (idx, wt) in &ty {
            for ox in 0..ow {
                let anchor = rows[idx[1] * ow + ox];
                let mut acc = T::zero();
                for k in 0..4 {
                    acc += T::lit(wt[k]) * (rows[idx[k] * ow + ox] - anchor);
                }
                out.push(anchor + acc);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Resamples by the rational factor `num / den`; the scaled size must be integral.
pub fn resample<T: Float>(x: &Tensor<T>, num: usize, den: usize, mode: ResampleMode) -> Result<Tensor<T>> {
    let (oh, ow) = scaled_size(x.shape(), num, den)?;
    match mode {
        ResampleMode::Bilinear => bilinear_resize(x, oh, ow),
        ResampleMode::Bicubic => bicubic_resize(x, oh, ow),
    }
}

fn scaled_size(shape: &[usize], num: usize, den: usize) -> Result<(usize, usize)> {
    let (_, _, h, w) = dims4(shape)?;
    ensure_dim!(num > 0 && den > 0, "resample: factor {num}/{den} must be positive");
    ensure_dim!(
        (h * num) % den == 0 && (w * num) % den == 0,
        "resample: {h}x{w} times {num}/{den} is not integral"
    );
    let (oh, ow) = (h * num / den, w * num / den);
    check_target(oh, ow)?;
    Ok((oh, ow))
}

impl<'t, T: Float> Var<'t, T> {
    /// Differentiable bilinear resize to an explicit size.
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = dims4(x.shape())?;
        let out = bilinear_resize(&x, oh, ow)?;
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| {
                let ty = linear_taps(h, oh);
                let tx = linear_taps(w, ow);
                let mut dx = vec![T::zero(); n * c * h * w];
                for (plane, gp) in dx.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        let fy = T::lit(fy);
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let fx = T::lit(fx);
                            let gv = gp[oy * ow + ox];
                            let (gt, gb) = (gv * (T::one() - fy), gv * fy);
                            plane[y0 * w + x0] += gt * (T::one() - fx);
                            plane[y0 * w + x1] += gt * fx;
                            plane[y1 * w + x0] += gb * (T::one() - fx);
                            plane[y1 * w + x1] += gb * fx;
                        }
                    }
                }
                vec![Some(dx)]
            })
        })
    }

    /// Differentiable bilinear resample by `num / den`.
    pub fn resample_bilinear(&self, num: usize, den: usize) -> Result<Var<'t, T>> {
        let (oh, ow) = scaled_size(&self.shape(), num, den)?;
        self.resize_bilinear(oh, ow)
    }
}
