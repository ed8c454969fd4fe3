#![allow(dead_code)]
//! Straight-line reference implementations used as test oracles.
//! Single image, CHW layout, f64, nested loops only.

pub mod metrics;

use mbt_core::model::ParamTree;
use mbt_core::{Rng, Tensor};

#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map { c, h, w, v: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        assert_eq!(s[0], 1);
        Map { c: s[1], h: s[2], w: s[3], v: t.data().to_vec() }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, val: f64) {
        self.v[(c * self.h + y) * self.w + x] = val;
    }
}

pub fn erf_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-padded "same" convolution, stride 1.
pub fn conv(x: &Map, w: &Tensor<f64>, b: &Tensor<f64>) -> Map {
    let s = w.shape();
    let (co, ci, k) = (s[0], s[1], s[2]);
    assert_eq!(ci, x.c);
    let p = (k / 2) as isize;
    let wd = w.data();
    let mut out = Map::zeros(co, x.h, x.w);
    for o in 0..co {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = b.data()[o];
                for i in 0..ci {
                    for dy in 0..k {
                        for dx in 0..k {
                            let sy = y as isize + dy as isize - p;
                            let sx = xx as isize + dx as isize - p;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            acc += wd[((o * ci + i) * k + dy) * k + dx] * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}

pub fn map_fn(x: &Map, f: impl Fn(f64) -> f64) -> Map {
    Map { v: x.v.iter().map(|&v| f(v)).collect(), ..x.clone() }
}

pub fn pool_sum(x: &Map, s: usize) -> Map {
    let mut out = Map::zeros(x.c, x.h / s, x.w / s);
    for c in 0..x.c {
        for y in 0..x.h / s {
            for xx in 0..x.w / s {
                let mut sum = 0.0;
                let mut max = f64::NEG_INFINITY;
                for dy in 0..s {
                    for dx in 0..s {
                        let v = x.at(c, y * s + dy, xx * s + dx);
                        sum += v;
                        max = max.max(v);
                    }
                }
                out.set(c, y, xx, sum / (s * s) as f64 + max);
            }
        }
    }
    out
}

/// Tokens (one per pixel) as rows of length c.
pub fn tokens(x: &Map) -> Vec<Vec<f64>> {
    let mut t = Vec::new();
    for y in 0..x.h {
        for xx in 0..x.w {
            t.push((0..x.c).map(|c| x.at(c, y, xx)).collect());
        }
    }
    t
}

pub fn linear(rows: &[Vec<f64>], w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (o, i) = (w.shape()[0], w.shape()[1]);
    rows.iter()
        .map(|r| {
            (0..o)
                .map(|oo| b.data()[oo] + (0..i).map(|ii| w.data()[oo * i + ii] * r[ii]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn ppsa(x: &Map, p: &ParamTree<f64>, prefix: &str, heads: usize, ratios: &[usize]) -> Map {
    let g = |n: &str| p.get(&format!("{prefix}{n}")).unwrap();
    let mut kv_rows = Vec::new();
    for &r in ratios {
        kv_rows.extend(tokens(&pool_sum(x, r)));
    }
    let q = linear(&tokens(x), g("q_proj.weight"), g("q_proj.bias"));
    let k = linear(&kv_rows, g("k_proj.weight"), g("k_proj.bias"));
    let v = linear(&kv_rows, g("v_proj.weight"), g("v_proj.bias"));
    let d = x.c / heads;
    let mut y = Map::zeros(x.c, x.h, x.w);
    for head in 0..heads {
        for (qi, qrow) in q.iter().enumerate() {
            let logits: Vec<f64> = k
                .iter()
                .map(|krow| (0..d).map(|j| qrow[head * d + j] * krow[head * d + j]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for j in 0..d {
                let val: f64 = e.iter().zip(&v).map(|(a, vr)| a / z * vr[head * d + j]).sum();
                y.set(head * d + j, qi / x.w, qi % x.w, val);
            }
        }
    }
    conv(&y, g("out_proj.weight"), g("out_proj.bias"))
}

pub fn cab(x: &Map, p: &ParamTree<f64>, prefix: &str) -> Map {
    let g = |n: &str| p.get(&format!("{prefix}{n}")).unwrap();
    let f = conv(&map_fn(&conv(x, g("conv1.weight"), g("conv1.bias")), erf_gelu), g("conv2.weight"), g("conv2.bias"));
    let mut pooled = Map::zeros(f.c, 1, 1);
    for c in 0..f.c {
        let mut s = 0.0;
        for y in 0..f.h {
            for xx in 0..f.w {
                s += f.at(c, y, xx);
            }
        }
        pooled.set(c, 0, 0, s / (f.h * f.w) as f64);
    }
    let hidden = map_fn(&conv(&pooled, g("ca_reduce.weight"), g("ca_reduce.bias")), erf_gelu);
    let gate = map_fn(&conv(&hidden, g("ca_expand.weight"), g("ca_expand.bias")), sigmoid);
    let mut out = f.clone();
    for c in 0..f.c {
        for y in 0..f.h {
            for xx in 0..f.w {
                out.set(c, y, xx, f.at(c, y, xx) * gate.at(c, 0, 0));
            }
        }
    }
    out
}

pub fn max_diff(a: &Map, b: &Map) -> f64 {
    assert_eq!((a.c, a.h, a.w), (b.c, b.h, b.w));
    a.v.iter().zip(&b.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Replaces every tensor with seeded normal noise.
pub fn randomize(tree: &ParamTree<f64>, std: f64, seed: u64) -> ParamTree<f64> {
    let mut rng = Rng::new(seed);
    tree.map_values(|_, t| Tensor::rand_normal(t.shape().to_vec(), std, &mut rng))
}

pub fn zeroed<T: mbt_core::Float>(tree: &ParamTree<T>) -> ParamTree<T> {
    tree.map_values(|_, t| Tensor::zeros(t.shape().to_vec()))
}

pub mod audit {
    use mbt_core::model::{CptbTrace, ParamTree, SpalTrace};
    use mbt_core::ops::{conv2d_forward, Padding};
    use mbt_core::Tensor;

    fn zip(a: &Tensor<f64>, b: &Tensor<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
        assert_eq!(a.shape(), b.shape());
        Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()).unwrap()
    }

    fn conv1(p: &ParamTree<f64>, name: &str, x: &Tensor<f64>) -> Tensor<f64> {
        let w = p.get(&format!("{name}.weight")).unwrap();
        let b = p.get(&format!("{name}.bias")).unwrap();
        conv2d_forward(x, w, Some(b), 1, Padding::none()).unwrap()
    }

    /// Names of the back-projection relations that fail to hold bit-exactly.
    pub fn spal(t: &SpalTrace<f64>, p: &ParamTree<f64>, prefix: &str, input: &Tensor<f64>) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let f_e = conv1(p, &format!("{prefix}.err_proj"), &zip(&t.f_c_bar, &t.f_p_bar, |a, b| a - b));
        if !f_e.bit_eq(&t.f_e) {
            bad.push("feedback error");
        }
        let f_bar = zip(&conv1(p, &format!("{prefix}.fuse_proj"), &t.f_p_bar), &t.f_e, |a, b| a + b);
        if !f_bar.bit_eq(&t.f_bar) {
            bad.push("back-projection fusion");
        }
        if !zip(&t.f_bar, input, |a, b| a + b).bit_eq(&t.f_hat) {
            bad.push("enhanced residual");
        }
        bad
    }

    pub fn cptb(t: &CptbTrace<f64>, p: &ParamTree<f64>, prefix: &str, input: &Tensor<f64>) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if !zip(&t.h_p_bar, &t.h_c_bar, |a, b| a - b).bit_eq(&t.h_e) {
            bad.push("differential feature");
        }
        let h_bar = zip(
            &conv1(p, &format!("{prefix}.err_proj"), &t.h_e),
            &conv1(p, &format!("{prefix}.fuse_proj"), &t.h_p_bar),
            |a, b| a + b,
        );
        if !h_bar.bit_eq(&t.h_bar) {
            bad.push("complementary fusion");
        }
        if !zip(&t.h_bar, input, |a, b| a + b).bit_eq(&t.h_out) {
            bad.push("block residual");
        }
        bad
    }
}
