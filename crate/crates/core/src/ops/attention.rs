use rayon::prelude::*;

use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::tensor::{Float, Tensor};

/// Numerically stable in-place softmax of each `width`-long row.
pub fn softmax_rows<T: Float>(data: &mut [T], width: usize) {
    for row in data.chunks_mut(width) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = T::one() / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
}

fn softmax_rows_backward<T: Float>(p: &[T], g: &[T], width: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); p.len()];
    for ((prow, grow), drow) in p.chunks(width).zip(g.chunks(width)).zip(dx.chunks_mut(width)) {
        let dot: T = prow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
        for ((d, &pi), &gi) in drow.iter_mut().zip(prow).zip(grow) {
            *d = pi * (gi - dot);
        }
    }
    dx
}

#[derive(Clone, Copy)]
struct AttnDims {
    batches: usize,
    lq: usize,
    lkv: usize,
    d: usize,
}

fn attn_dims(q: &[usize], k: &[usize], v: &[usize]) -> Result<AttnDims> {
    ensure_dim!(
        q.len() == 4 && k.len() == 4 && v.len() == 4,
        "attention: Q/K/V must be rank 4 [N, heads, L, d]"
    );
    ensure_dim!(
        q[0] == k[0] && q[1] == k[1] && k[..] == v[..],
        "attention: incompatible shapes Q {q:?}, K {k:?}, V {v:?}"
    );
    ensure_dim!(q[3] == k[3] && q[3] > 0, "attention: head dim mismatch or zero ({} vs {})", q[3], k[3]);
    ensure_dim!(k[2] >= 1, "attention: need at least one key");
    Ok(AttnDims { batches: q[0] * q[1], lq: q[2], lkv: k[2], d: q[3] })
}

/// softmax(Q K^T / sqrt(d)) V. Returns the output and the attention weights
/// [N, heads, Lq, Lkv].
pub fn attention_forward<T: Float>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let dims = attn_dims(q.shape(), k.shape(), v.shape())?;
    let (probs, out) = attention_kernel(&dims, q.data(), k.data(), v.data());
    let mut pshape = q.shape().to_vec();
    pshape[3] = dims.lkv;
    Ok((Tensor::new(q.shape().to_vec(), out)?, Tensor::new(pshape, probs)?))
}

fn attention_kernel<T: Float>(dims: &AttnDims, q: &[T], k: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
    let AttnDims { batches, lq, lkv, d } = *dims;
    let scale = T::lit(1.0 / (d as f64).sqrt());
    let mut probs = vec![T::zero(); batches * lq * lkv];
    let mut out = vec![T::zero(); batches * lq * d];
    probs
        .par_chunks_mut(lq * lkv)
        .zip(out.par_chunks_mut(lq * d))
        .enumerate()
        .for_each(|(b, (p, o))| {
            let qb = &q[b * lq * d..(b + 1) * lq * d];
            let kb = &k[b * lkv * d..(b + 1) * lkv * d];
            let vb = &v[b * lkv * d..(b + 1) * lkv * d];
            T::gemm(lq, d, lkv, scale, qb, d as isize, 1, kb, 1, d as isize, T::zero(), p, lkv as isize, 1);
            softmax_rows(p, lkv);
            T::gemm(lq, lkv, d, T::one(), p, lkv as isize, 1, vb, d as isize, 1, T::zero(), o, d as isize, 1);
        });
    (probs, out)
}

impl<'t, T: Float> Var<'t, T> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t, T>> {
        let x = self.value();
        let width = *x.shape().last().unwrap();
        let mut data = x.data().to_vec();
        softmax_rows(&mut data, width);
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let p = out.data().to_vec();
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| vec![Some(softmax_rows_backward(&p, g, width))])
        })
    }

    /// Scaled dot-product attention with `self` as the queries.
    pub fn attention(&self, k: &Var<'t, T>, v: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(k)?;
        self.same_tape(v)?;
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let dims = attn_dims(qv.shape(), kv.shape(), vv.shape())?;
        let (probs, out) = attention_kernel(&dims, qv.data(), kv.data(), vv.data());
        let out = Tensor::new(qv.shape().to_vec(), out)?;
        self.tape().record(out, &[*self, *k, *v], move || {
            Box::new(move |g, need| attention_backward(&dims, &qv, &kv, &vv, &probs, g, need))
        })
    }
}

fn attention_backward<T: Float>(
    dims: &AttnDims,
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    probs: &[T],
    g: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let AttnDims { lq, lkv, d, .. } = *dims;
    let scale = T::lit(1.0 / (d as f64).sqrt());
    let mut dq = vec![T::zero(); q.numel()];
    let mut dk = vec![T::zero(); k.numel()];
    let mut dv = vec![T::zero(); v.numel()];
    dq.par_chunks_mut(lq * d)
        .zip(dk.par_chunks_mut(lkv * d))
        .zip(dv.par_chunks_mut(lkv * d))
        .enumerate()
        .for_each(|(b, ((dqb, dkb), dvb))| {
            let qb = &q.data()[b * lq * d..(b + 1) * lq * d];
            let kb = &k.data()[b * lkv * d..(b + 1) * lkv * d];
            let vb = &v.data()[b * lkv * d..(b + 1) * lkv * d];
            let pb = &probs[b * lq * lkv..(b + 1) * lq * lkv];
            let gb = &g[b * lq * d..(b + 1) * lq * d];
            // dV = P^T dO
            if need[2] {
                T::gemm(lkv, lq, d, T::one(), pb, 1, lkv as isize, gb, d as isize, 1, T::zero(), dvb, d as isize, 1);
            }
            if need[0] || need[1] {
                // dP = dO V^T, then dS = softmax'(dP) * scale.
                let mut dp = vec![T::zero(); lq * lkv];
                T::gemm(lq, d, lkv, T::one(), gb, d as isize, 1, vb, 1, d as isize, T::zero(), &mut dp, lkv as isize, 1);
                let mut ds = softmax_rows_backward(pb, &dp, lkv);
                ds.iter_mut().for_each(|x| *x *= scale);
                if need[0] {
                    T::gemm(lq, lkv, d, T::one(), &ds, lkv as isize, 1, kb, d as isize, 1, T::zero(), dqb, d as isize, 1);
                }
                if need[1] {
                    T::gemm(lkv, lq, d, T::one(), &ds, 1, lkv as isize, qb, d as isize, 1, T::zero(), dkb, d as isize, 1);
                }
            }
        });
    vec![need[0].then_some(dq), need[1].then_some(dk), need[2].then_some(dv)]
}
