use super::strides;
use crate::autograd::Var;
use crate::error::{dim_err, ensure_dim, Result};
use crate::tensor::{dims4, numel, Float, Tensor};

fn permute_data<T: Float>(data: &[T], shape: &[usize], perm: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let rank = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let last = rank - 1;
    let (last_len, last_stride) = (out_shape[last], src_strides[last]);
    'outer: loop {
        for j in 0..last_len {
            out.push(data[offset + j * last_stride]);
        }
        // advance every axis except the innermost
        let mut ax = last;
        loop {
            if ax == 0 {
                break 'outer;
            }
            ax -= 1;
            idx[ax] += 1;
            offset += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

fn pixel_shuffle_data<T: Float>(x: &[T], n: usize, c: usize, h: usize, w: usize, r: usize, inverse: bool) -> Vec<T> {
    // Forward maps channel c*r^2 + dy*r + dx at (y, x) to (y*r + dy, x*r + dx).
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let sc = (b * c + ch) * r * r + dy * r + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            let lo = (sc * h + y) * w + xx;
                            let hi = ((b * c + ch) * oh + y * r + dy) * ow + xx * r + dx;
                            if inverse {
                                out[lo] = x[hi];
                            } else {
                                out[hi] = x[lo];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// [N, C*r^2, H, W] -> [N, C, rH, rW].
pub fn pixel_shuffle_tensor<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(x.shape())?;
    ensure_dim!(r >= 1 && c % (r * r) == 0, "pixel_shuffle: {c} channels not divisible by r^2 = {}", r * r);
    let c = c / (r * r);
    Tensor::new(vec![n, c, h * r, w * r], pixel_shuffle_data(x.data(), n, c, h, w, r, false))
}

/// Exact inverse of [`pixel_shuffle_tensor`]: [N, C, rH, rW] -> [N, C*r^2, H, W].
pub fn pixel_unshuffle_tensor<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, oh, ow) = dims4(x.shape())?;
    ensure_dim!(r >= 1 && oh % r == 0 && ow % r == 0, "pixel_unshuffle: {oh}x{ow} not divisible by {r}");
    let (h, w) = (oh / r, ow / r);
    Tensor::new(vec![n, c * r * r, h, w], pixel_shuffle_data(x.data(), n, c, h, w, r, true))
}

/// Copies the window [top, top+height) x [left, left+width) of every plane.
pub fn crop<T: Float>(x: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(x.shape())?;
    ensure_dim!(
        top + height <= h && left + width <= w && height > 0 && width > 0,
        "crop: window {height}x{width} at ({top},{left}) outside {h}x{w}"
    );
    let mut out = Vec::with_capacity(n * c * height * width);
    for plane in x.data().chunks(h * w) {
        for y in top..top + height {
            out.extend_from_slice(&plane[y * w + left..y * w + left + width]);
        }
    }
    Tensor::new(vec![n, c, height, width], out)
}

fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Reflection-pads the bottom and right edges (no edge repeat).
pub fn pad_reflect<T: Float>(x: &Tensor<T>, bottom: usize, right: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(x.shape())?;
    let (oh, ow) = (h + bottom, w + right);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for y in 0..oh {
            let sy = reflect_index(y as isize, h);
            for xx in 0..ow {
                out.push(plane[sy * w + reflect_index(xx as isize, w)]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

impl<'t, T: Float> Var<'t, T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        ensure_dim!(
            numel(shape) == x.numel(),
            "reshape: cannot view {:?} as {shape:?}",
            x.shape()
        );
        let out = Tensor::new(shape.to_vec(), x.data().to_vec())?;
        self.tape().record(out, &[*self], || Box::new(|g, _| vec![Some(g.to_vec())]))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let rank = x.rank();
        let mut seen = vec![false; rank];
        ensure_dim!(perm.len() == rank, "permute: {perm:?} does not match rank {rank}");
        for &p in perm {
            ensure_dim!(p < rank && !seen[p], "permute: {perm:?} is not a permutation");
            seen[p] = true;
        }
        let (data, shape) = permute_data(x.data(), x.shape(), perm);
        let mut inverse = vec![0; rank];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape = shape.clone();
        let out = Tensor::new(shape, data)?;
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| vec![Some(permute_data(g, &out_shape, &inverse).0)])
        })
    }

    /// Contiguous slice [start, start+len) along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        ensure_dim!(axis < shape.len(), "narrow: axis {axis} out of range for rank {}", shape.len());
        ensure_dim!(len > 0 && start + len <= shape[axis], "narrow: [{start}, {}) exceeds {}", start + len, shape[axis]);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let total = x.numel();
        self.tape().record(Tensor::new(oshape, out)?, &[*self], move || {
            Box::new(move |g, _| {
                let mut dx = vec![T::zero(); total];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(dx)]
            })
        })
    }

    /// Splits along `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<'t, T>>> {
        let shape = self.shape();
        ensure_dim!(axis < shape.len(), "split: axis {axis} out of range for rank {}", shape.len());
        ensure_dim!(
            sizes.iter().sum::<usize>() == shape[axis],
            "split: sizes {sizes:?} do not sum to {}",
            shape[axis]
        );
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let piece = self.narrow(axis, start, len);
                start += len;
                piece
            })
            .collect()
    }

    /// Concatenates along `axis`; every other dimension must agree.
    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| dim_err!("concat: no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let shape0 = values[0].shape().to_vec();
        ensure_dim!(axis < shape0.len(), "concat: axis {axis} out of range for rank {}", shape0.len());
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p)?;
            let s = v.shape();
            ensure_dim!(
                s.len() == shape0.len()
                    && s.iter().zip(&shape0).enumerate().all(|(i, (a, b))| i == axis || a == b),
                "concat: shape {s:?} incompatible with {shape0:?} on axis {axis}"
            );
        }
        let outer: usize = shape0[..axis].iter().product();
        let inner: usize = shape0[axis + 1..].iter().product();
        let lens: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let total_len: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut oshape = shape0;
        oshape[axis] = total_len;
        first.tape().record(Tensor::new(oshape, out)?, parts, move || {
            Box::new(move |g, need| {
                let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gp, &l) in grads.iter_mut().zip(&lens) {
                        gp.extend_from_slice(&g[off..off + l * inner]);
                        off += l * inner;
                    }
                }
                grads.into_iter().zip(need).map(|(gp, &n)| n.then_some(gp)).collect()
            })
        })
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let out = pixel_shuffle_tensor(&x, r)?;
        let (n, c, h, w) = (out.shape()[0], out.shape()[1], x.shape()[2], x.shape()[3]);
        self.tape().record(out, &[*self], move || {
            Box::new(move |g, _| vec![Some(pixel_shuffle_data(g, n, c, h, w, r, true))])
        })
    }
}
