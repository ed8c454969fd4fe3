use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::tensor::{dims4, Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

impl<'t, T: Float> Var<'t, T> {
    /// Non-overlapping pooling with kernel = stride = `s`. Max-pool gradients
    /// go to the first maximum in row-major window order.
    pub fn pool2d(&self, mode: PoolMode, s: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = dims4(x.shape())?;
        ensure_dim!(s >= 1, "pool2d: ratio must be >= 1");
        ensure_dim!(h % s == 0 && w % s == 0, "pool2d: {h}x{w} not divisible by ratio {s}");
        let (oh, ow) = (h / s, w / s);
        let planes = n * c;
        let mut out = vec![T::zero(); planes * oh * ow];
        let mut argmax = if mode == PoolMode::Max { vec![0usize; out.len()] } else { Vec::new() };
        let inv = T::lit(1.0 / (s * s) as f64);
        let xd = x.data();
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = (p * oh + oy) * ow + ox;
                    match mode {
                        PoolMode::Avg => {
                            // Deviations from the first element keep constants exact.
                            let anchor = xd[base + oy * s * w + ox * s];
                            let mut acc = T::zero();
                            for dy in 0..s {
                                let row = base + (oy * s + dy) * w + ox * s;
                                for v in &xd[row..row + s] {
                                    acc += *v - anchor;
                                }
                            }
                            out[o] = anchor + acc * inv;
                        }
                        PoolMode::Max => {
                            let mut best = base + oy * s * w + ox * s;
                            for dy in 0..s {
                                let row = base + (oy * s + dy) * w + ox * s;
                                for i in row..row + s {
                                    if xd[i] > xd[best] {
                                        best = i;
                                    }
                                }
                            }
                            out[o] = xd[best];
                            argmax[o] = best;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        let len = x.numel();
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); len];
                match mode {
                    PoolMode::Max => {
                        for (&gi, &src) in g.iter().zip(&argmax) {
                            dx[src] += gi;
                        }
                    }
                    PoolMode::Avg => {
                        for p in 0..planes {
                            let base = p * h * w;
                            for y in 0..h {
                                for xx in 0..w {
                                    dx[base + y * w + xx] = g[(p * oh + y / s) * ow + xx / s] * inv;
                                }
                            }
                        }
                    }
                }
                vec![Some(dx)]
            })
        })
    }

    /// Mean over spatial positions: [N, C, H, W] -> [N, C, 1, 1].
    pub fn global_avg_pool(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = dims4(x.shape())?;
        let hw = h * w;
        let inv = T::lit(1.0 / hw as f64);
        let out: Vec<T> = x
            .data()
            .chunks(hw)
            .map(|p| p[0] + p.iter().map(|&v| v - p[0]).sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![n, c, 1, 1], out)?;
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| {
                vec![Some(g.iter().flat_map(|&gi| std::iter::repeat_n(gi * inv, hw)).collect())]
            })
        })
    }

    /// Nearest-neighbour repeat of each pixel into an `s` x `s` block.
    pub fn upsample_nearest(&self, s: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = dims4(x.shape())?;
        ensure_dim!(s >= 1, "upsample_nearest: factor must be >= 1");
        let (oh, ow) = (h * s, w * s);
        let xd = x.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(p * oh + y) * ow + xx] = xd[(p * h + y / s) * w + xx / s];
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            dx[(p * h + y / s) * w + xx / s] += g[(p * oh + y) * ow + xx];
                        }
                    }
                }
                vec![Some(dx)]
            })
        })
    }
}
