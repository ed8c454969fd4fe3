use std::f64::consts::PI;

use super::same_shape;
use crate::autograd::{fault, Var};
use crate::error::{ensure_dim, Result};
use crate::tensor::{dims4, Float, Tensor};

fn zip_map<T: Float>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[inline]
pub(crate) fn gelu<T: Float>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad<T: Float>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

#[inline]
pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'t, T: Float> Var<'t, T> {
    fn binary(
        &self,
        other: &Var<'t, T>,
        op: &str,
        f: impl Fn(T, T) -> T,
        backward: impl Fn(&[T], &[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        same_shape(a.shape(), b.shape(), op)?;
        let out = Tensor::new(a.shape().to_vec(), zip_map(a.data(), b.data(), f))?;
        self.tape().record(out, &[*self, *other], move || {
            Box::new(move |g, need| backward(g, a.data(), b.data(), need))
        })
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", |x, y| x + y, |g, _, _, need| {
            vec![need[0].then(|| g.to_vec()), need[1].then(|| g.to_vec())]
        })
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", |x, y| x - y, |g, _, _, need| {
            vec![
                need[0].then(|| g.to_vec()),
                need[1].then(|| g.iter().map(|&v| -v).collect()),
            ]
        })
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", |x, y| x * y, |g, a, b, need| {
            vec![
                need[0].then(|| zip_map(g, b, |g, b| g * b)),
                need[1].then(|| zip_map(g, a, |g, a| g * a)),
            ]
        })
    }

    fn unary(
        &self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let data: Vec<T> = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| vec![Some(zip_map(g, x.data(), |g, x| g * df(x, g)))])
        })
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t, T>> {
        let s = T::lit(s);
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn neg(&self) -> Result<Var<'t, T>> {
        self.scale(-1.0)
    }

    /// Absolute value; the subgradient at exactly zero is 0.
    pub fn abs(&self) -> Result<Var<'t, T>> {
        self.unary(|x| x.abs(), |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn ln(&self) -> Result<Var<'t, T>> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Result<Var<'t, T>> {
        let corrupt = fault::corrupt_gelu_backward();
        self.unary(gelu, move |x, _| {
            let d = gelu_grad(x);
            if corrupt {
                d * T::lit(1.01)
            } else {
                d
            }
        })
    }

    pub fn sigmoid(&self) -> Result<Var<'t, T>> {
        self.unary(sigmoid, |x, _| {
            let s = sigmoid(x);
            s * (T::one() - s)
        })
    }

    pub fn sum(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.numel();
        let total: T = x.data().iter().copied().sum();
        self.tape().record(Tensor::scalar(total), &[*self], move || {
            Box::new(move |g, _| vec![Some(vec![g[0]; n])])
        })
    }

    pub fn mean(&self) -> Result<Var<'t, T>> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Multiplies each (n, c) plane of an NCHW tensor by `gate[n, c]`,
    /// where `gate` has shape [N, C] or [N, C, 1, 1].
    pub fn mul_channels(&self, gate: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(gate)?;
        let x = self.value();
        let gv = gate.value();
        let (n, c, h, w) = dims4(x.shape())?;
        ensure_dim!(
            gv.numel() == n * c && gv.shape()[0] == n && gv.shape()[1] == c,
            "mul_channels: gate shape {:?} incompatible with {:?}",
            gv.shape(),
            x.shape()
        );
        let hw = h * w;
        let mut out = x.data().to_vec();
        for (plane, &s) in out.chunks_mut(hw).zip(gv.data()) {
            plane.iter_mut().for_each(|v| *v *= s);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.tape().record(out, &[*self, *gate], move || {
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut dx = g.to_vec();
                    for (plane, &s) in dx.chunks_mut(hw).zip(gv.data()) {
                        plane.iter_mut().for_each(|v| *v *= s);
                    }
                    dx
                });
                let dg = need[1].then(|| {
                    g.chunks(hw)
                        .zip(x.data().chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                        .collect()
                });
                vec![dx, dg]
            })
        })
    }
}
