use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::tensor::{Float, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<'t, T: Float> Var<'t, T> {
    /// Layer normalization across axis 1 (channels) at every other index,
    /// with learned per-channel `scale` and `shift`.
    pub fn layer_norm(&self, scale: &Var<'t, T>, shift: &Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        self.same_tape(scale)?;
        self.same_tape(shift)?;
        let x = self.value();
        let shape = x.shape().to_vec();
        ensure_dim!(shape.len() >= 2, "layer_norm: need at least rank 2, got {shape:?}");
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let (gv, bv) = (scale.value(), shift.value());
        ensure_dim!(
            gv.numel() == c && bv.numel() == c,
            "layer_norm: scale/shift need {c} elements"
        );
        let eps = T::lit(eps);
        let inv_c = T::lit(1.0 / c as f64);
        let xd = x.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); n * inner];
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..n {
            let base = b * c * inner;
            for p in 0..inner {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean += xd[base + ch * inner + p];
                }
                mean = mean * inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = xd[base + ch * inner + p] - mean;
                    var += d * d;
                }
                let r = T::one() / (var * inv_c + eps).sqrt();
                rstd[b * inner + p] = r;
                for ch in 0..c {
                    let i = base + ch * inner + p;
                    let h = (xd[i] - mean) * r;
                    xhat[i] = h;
                    out[i] = h * gv.data()[ch] + bv.data()[ch];
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.tape().record(out, &[*self, *scale, *shift], move || {
            Box::new(move |g, need| {
                let gamma = gv.data();
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); g.len()];
                    for b in 0..n {
                        let base = b * c * inner;
                        for p in 0..inner {
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for ch in 0..c {
                                let i = base + ch * inner + p;
                                let d = g[i] * gamma[ch];
                                m1 += d;
                                m2 += d * xhat[i];
                            }
                            m1 = m1 * inv_c;
                            m2 = m2 * inv_c;
                            let r = rstd[b * inner + p];
                            for ch in 0..c {
                                let i = base + ch * inner + p;
                                dx[i] = r * (g[i] * gamma[ch] - m1 - xhat[i] * m2);
                            }
                        }
                    }
                    dx
                });
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                if need[1] || need[2] {
                    for b in 0..n {
                        for ch in 0..c {
                            let base = (b * c + ch) * inner;
                            for p in 0..inner {
                                dgamma[ch] += g[base + p] * xhat[base + p];
                                dbeta[ch] += g[base + p];
                            }
                        }
                    }
                }
                vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::gradcheck::{finite_diff_grad, rel_error};
    use crate::tensor::Rng;

    #[test]
    fn constant_channel_vector_normalizes_to_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 4, 2, 2], 3.0));
        let g = tape.constant(Tensor::full(vec![4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![4]));
        let y = x.layer_norm(&g, &b, LAYER_NORM_EPS).unwrap();
        assert!(y.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(13);
        let x0 = Tensor::<f64>::rand_uniform(vec![2, 5, 2, 3], -2.0, 2.0, &mut rng);
        let g0 = Tensor::<f64>::rand_uniform(vec![5], 0.5, 1.5, &mut rng);
        let b0 = Tensor::<f64>::rand_uniform(vec![5], -0.5, 0.5, &mut rng);
        let probe = Tensor::<f64>::rand_uniform(vec![2, 5, 2, 3], -1.0, 1.0, &mut rng);
        let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            let tape = Tape::new();
            let y = tape.constant(x.clone()).layer_norm(&tape.constant(g.clone()), &tape.constant(b.clone()), LAYER_NORM_EPS)?;
            Ok(y.value().data().iter().zip(probe.data()).map(|(a, p)| a * a * p).sum::<f64>())
        };
        let tape = Tape::new();
        let (x, g, b) = (tape.param(x0.clone()), tape.param(g0.clone()), tape.param(b0.clone()));
        let y = x.layer_norm(&g, &b, LAYER_NORM_EPS).unwrap();
        let l = y.mul(&y).unwrap().mul(&tape.constant(probe.clone())).unwrap().sum().unwrap();
        tape.backward(l).unwrap();
        assert!(rel_error(&x.grad().unwrap(), &finite_diff_grad(|t| f(t, &g0, &b0), &x0, 1e-5).unwrap()) < 1e-6);
        assert!(rel_error(&g.grad().unwrap(), &finite_diff_grad(|t| f(&x0, t, &b0), &g0, 1e-5).unwrap()) < 1e-6);
        assert!(rel_error(&b.grad().unwrap(), &finite_diff_grad(|t| f(&x0, &g0, t), &b0, 1e-5).unwrap()) < 1e-6);
    }
}
