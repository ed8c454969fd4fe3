use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::tensor::{Float, Tensor};

impl<'t, T: Float> Var<'t, T> {
    /// y = x W^T + b over the last axis; `weight` is [out, in].
    pub fn linear(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        let x = self.value();
        let wv = weight.value();
        ensure_dim!(wv.rank() == 2, "linear: weight must be rank 2, got {:?}", wv.shape());
        let (out_f, in_f) = (wv.shape()[0], wv.shape()[1]);
        let last = *x.shape().last().unwrap();
        ensure_dim!(last == in_f, "linear: input feature size {last} != weight input {in_f}");
        let rows = x.numel() / in_f;
        let mut out = vec![T::zero(); rows * out_f];
        let bv = bias.map(|b| b.value());
        if let Some(b) = &bv {
            ensure_dim!(b.numel() == out_f, "linear: bias has {} elements, expected {out_f}", b.numel());
            for row in out.chunks_mut(out_f) {
                row.copy_from_slice(b.data());
            }
        }
        let beta = if bv.is_some() { T::one() } else { T::zero() };
        T::gemm(
            rows, in_f, out_f, T::one(),
            x.data(), in_f as isize, 1,
            wv.data(), 1, in_f as isize,
            beta, &mut out, out_f as isize, 1,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_f;
        let out = Tensor::new(shape, out)?;
        let mut inputs = vec![*self, *weight];
        if let Some(b) = bias {
            self.same_tape(b)?;
            inputs.push(*b);
        }
        let has_bias = bias.is_some();
        self.tape().record(out, &inputs, move || {
            Box::new(move |g, need| {
                let dx = need[0].then(|| {
                    let mut dx = vec![T::zero(); rows * in_f];
                    T::gemm(
                        rows, out_f, in_f, T::one(),
                        g, out_f as isize, 1,
                        wv.data(), in_f as isize, 1,
                        T::zero(), &mut dx, in_f as isize, 1,
                    );
                    dx
                });
                let dw = need[1].then(|| {
                    let mut dw = vec![T::zero(); out_f * in_f];
                    T::gemm(
                        out_f, rows, in_f, T::one(),
                        g, 1, out_f as isize,
                        x.data(), in_f as isize, 1,
                        T::zero(), &mut dw, in_f as isize, 1,
                    );
                    dw
                });
                let mut grads = vec![dx, dw];
                if has_bias {
                    grads.push(need[2].then(|| {
                        let mut db = vec![T::zero(); out_f];
                        for row in g.chunks(out_f) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                        db
                    }));
                }
                grads
            })
        })
    }
}
