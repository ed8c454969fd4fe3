use rayon::prelude::*;

use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::tensor::{dims4, Float, Tensor};

/// Spatial padding applied before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

impl Padding {
    pub fn none() -> Self {
        Padding::Zero(0)
    }

    /// Zero padding that keeps the spatial size for an odd kernel at stride 1.
    pub fn same(kernel: usize) -> Self {
        Padding::Zero((kernel - 1) / 2)
    }

    pub fn size(self) -> usize {
        match self {
            Padding::Zero(p) | Padding::Reflect(p) => p,
        }
    }
}

/// Precomputed sampling geometry shared by every channel and batch item.
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    /// For each (ky, kx, oy, ox): source offset in an H*W plane, or -1 for zero padding.
    src: Vec<isize>,
    pointwise: bool,
}

impl Geometry {
    fn new(x: &[usize], wt: &[usize], stride: usize, pad: Padding) -> Result<Self> {
        let (n, cin, h, w) = dims4(x)?;
        let (cout, wcin, kh, kw) = dims4(wt)?;
        ensure_dim!(stride >= 1, "conv2d: stride must be >= 1");
        ensure_dim!(wcin == cin, "conv2d: input has {cin} channels, weight expects {wcin}");
        ensure_dim!(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel {kh}x{kw} must be odd");
        let p = pad.size();
        if let Padding::Reflect(p) = pad {
            ensure_dim!(p < h && p < w, "conv2d: reflect padding {p} needs input larger than {h}x{w}");
        }
        ensure_dim!(
            h + 2 * p >= kh && w + 2 * p >= kw,
            "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
            h + 2 * p,
            w + 2 * p
        );
        ensure_dim!(
            (h + 2 * p - kh) % stride == 0 && (w + 2 * p - kw) % stride == 0,
            "conv2d: non-integral output size for input {h}x{w}, kernel {kh}x{kw}, padding {p}, stride {stride}"
        );
        let oh = (h + 2 * p - kh) / stride + 1;
        let ow = (w + 2 * p - kw) / stride + 1;
        let pointwise = kh == 1 && kw == 1 && stride == 1 && p == 0;
        let mut src = Vec::new();
        if !pointwise {
            src.reserve(kh * kw * oh * ow);
            let map = |i: isize, len: usize| -> isize {
                match pad {
                    Padding::Zero(_) => {
                        if i < 0 || i >= len as isize {
                            -1
                        } else {
                            i
                        }
                    }
                    Padding::Reflect(_) => {
                        let len = len as isize;
                        if i < 0 {
                            -i
                        } else if i >= len {
                            2 * len - 2 - i
                        } else {
                            i
                        }
                    }
                }
            };
            for ky in 0..kh {
                for kx in 0..kw {
                    for oy in 0..oh {
                        let iy = map((oy * stride + ky) as isize - p as isize, h);
                        for ox in 0..ow {
                            let ix = map((ox * stride + kx) as isize - p as isize, w);
                            src.push(if iy < 0 || ix < 0 { -1 } else { iy * w as isize + ix });
                        }
                    }
                }
            }
        }
        Ok(Self { n, cin, h, w, cout, kh, kw, oh, ow, src, pointwise })
    }

    fn kk(&self) -> usize {
        self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn im2col<T: Float>(&self, x: &[T], cols: &mut [T]) {
        let (hw, pos, kk) = (self.h * self.w, self.positions(), self.kk());
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for k in 0..kk {
                let row = &mut cols[(ci * kk + k) * pos..(ci * kk + k + 1) * pos];
                let src = &self.src[k * pos..(k + 1) * pos];
                for (dst, &s) in row.iter_mut().zip(src) {
                    *dst = if s < 0 { T::zero() } else { plane[s as usize] };
                }
            }
        }
    }

    fn col2im<T: Float>(&self, cols: &[T], dx: &mut [T]) {
        let (hw, pos, kk) = (self.h * self.w, self.positions(), self.kk());
        for ci in 0..self.cin {
            let plane = &mut dx[ci * hw..(ci + 1) * hw];
            for k in 0..kk {
                let row = &cols[(ci * kk + k) * pos..(ci * kk + k + 1) * pos];
                let src = &self.src[k * pos..(k + 1) * pos];
                for (&v, &s) in row.iter().zip(src) {
                    if s >= 0 {
                        plane[s as usize] += v;
                    }
                }
            }
        }
    }

    /// Column matrix for one batch item: [Cin*kh*kw, OH*OW].
    fn columns<'a, T: Float>(&self, x: &'a [T], buf: &'a mut Vec<T>) -> &'a [T] {
        if self.pointwise {
            x
        } else {
            buf.resize(self.cin * self.kk() * self.positions(), T::zero());
            self.im2col(x, buf);
            buf
        }
    }
}

pub fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        ensure_dim!(b.numel() == g.cout, "conv2d: bias has {} elements, expected {}", b.numel(), g.cout);
    }
    forward_with(&g, x, weight, bias)
}

fn forward_with<T: Float>(g: &Geometry, x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (pos, ck) = (g.positions(), g.cin * g.kk());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.cout * pos];
    out.par_chunks_mut(g.cout * pos)
        .zip(x.data().par_chunks(in_len))
        .for_each(|(out_n, x_n)| {
            let mut buf = Vec::new();
            let cols = g.columns(x_n, &mut buf);
            if let Some(b) = bias {
                for (row, &bv) in out_n.chunks_mut(pos).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v = bv);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(
                g.cout, ck, pos, T::one(),
                weight.data(), ck as isize, 1,
                cols, pos as isize, 1,
                beta, out_n, pos as isize, 1,
            );
        });
    Tensor::new(vec![g.n, g.cout, g.oh, g.ow], out)
}

impl<'t, T: Float> Var<'t, T> {
    /// 2-D cross-correlation over NCHW input with an [Cout, Cin, kH, kW] weight.
    pub fn conv2d(&self, weight: &Var<'t, T>, bias: Option<&Var<'t, T>>, stride: usize, pad: Padding) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        let x = self.value();
        let wv = weight.value();
        let bv = bias.map(|b| b.value());
        let g = Geometry::new(x.shape(), wv.shape(), stride, pad)?;
        if let Some(b) = &bv {
            ensure_dim!(b.numel() == g.cout, "conv2d: bias has {} elements, expected {}", b.numel(), g.cout);
        }
        let out = forward_with(&g, &x, &wv, bv.as_deref())?;
        let mut inputs = vec![*self, *weight];
        if let Some(b) = bias {
            self.same_tape(b)?;
            inputs.push(*b);
        }
        let has_bias = bias.is_some();
        self.tape().record(out, &inputs, move || {
            Box::new(move |gy, need| conv2d_backward(&g, &x, &wv, gy, need, has_bias))
        })
    }
}

fn conv2d_backward<T: Float>(
    g: &Geometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &[T],
    need: &[bool],
    has_bias: bool,
) -> Vec<Option<Vec<T>>> {
    let (pos, ck) = (g.positions(), g.cin * g.kk());
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * pos;
    let need_x = need[0];
    let need_w = need[1];

    // Per-item weight gradients, summed afterwards in batch order.
    let per_item: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = x
        .data()
        .par_chunks(in_len)
        .zip(gy.par_chunks(out_len))
        .map(|(x_n, gy_n)| {
            let mut buf = Vec::new();
            let dw = need_w.then(|| {
                let cols = g.columns(x_n, &mut buf);
                let mut dw = vec![T::zero(); g.cout * ck];
                T::gemm(
                    g.cout, pos, ck, T::one(),
                    gy_n, pos as isize, 1,
                    cols, 1, pos as isize,
                    T::zero(), &mut dw, ck as isize, 1,
                );
                dw
            });
            let dx = need_x.then(|| {
                let mut dcols = vec![T::zero(); ck * pos];
                T::gemm(
                    ck, g.cout, pos, T::one(),
                    weight.data(), 1, ck as isize,
                    gy_n, pos as isize, 1,
                    T::zero(), &mut dcols, pos as isize, 1,
                );
                if g.pointwise {
                    dcols
                } else {
                    let mut dx = vec![T::zero(); in_len];
                    g.col2im(&dcols, &mut dx);
                    dx
                }
            });
            (dx, dw)
        })
        .collect();

    let mut dx_all = need_x.then(|| Vec::with_capacity(g.n * in_len));
    let mut dw_all = need_w.then(|| vec![T::zero(); g.cout * ck]);
    for (dx, dw) in per_item {
        if let (Some(all), Some(dx)) = (&mut dx_all, dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(all), Some(dw)) = (&mut dw_all, dw) {
            all.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b);
        }
    }
    let mut grads = vec![dx_all, dw_all];
    if has_bias {
        grads.push(need[2].then(|| {
            let mut db = vec![T::zero(); g.cout];
            for gy_n in gy.chunks(out_len) {
                for (d, row) in db.iter_mut().zip(gy_n.chunks(pos)) {
                    *d += row.iter().copied().sum::<T>();
                }
            }
            db
        }));
    }
    grads
}
