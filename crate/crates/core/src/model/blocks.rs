use std::rc::Rc;

use super::config::ModelConfig;
use super::params::Scope;
use crate::autograd::Var;
use crate::error::{ensure_dim, Result};
use crate::ops::{Padding, PoolMode, LAYER_NORM_EPS};
use crate::tensor::{Float, Tensor};

type Value<T> = Rc<Tensor<T>>;

pub(crate) fn conv<'t, T: Float>(x: &Var<'t, T>, s: &Scope<'_, 't, T>, name: &str) -> Result<Var<'t, T>> {
    let p = s.sub(name);
    let w = p.get("weight")?;
    let k = w.shape()[2];
    x.conv2d(&w, Some(&p.get("bias")?), 1, Padding::same(k))
}

/// Per-position linear layer applied to NCHW features as a 1×1 convolution.
fn pointwise<'t, T: Float>(x: &Var<'t, T>, s: &Scope<'_, 't, T>, name: &str) -> Result<Var<'t, T>> {
    let p = s.sub(name);
    let w = p.get("weight")?;
    let (o, i) = (w.shape()[0], w.shape()[1]);
    x.conv2d(&w.reshape(&[o, i, 1, 1])?, Some(&p.get("bias")?), 1, Padding::none())
}

fn norm<'t, T: Float>(x: &Var<'t, T>, s: &Scope<'_, 't, T>, name: &str) -> Result<Var<'t, T>> {
    let p = s.sub(name);
    x.layer_norm(&p.get("weight")?, &p.get("bias")?, LAYER_NORM_EPS)
}

fn projection<'t, T: Float>(tokens: &Var<'t, T>, s: &Scope<'_, 't, T>, name: &str, heads: usize) -> Result<Var<'t, T>> {
    let p = s.sub(name);
    let y = tokens.linear(&p.get("weight")?, Some(&p.get("bias")?))?;
    let sh = y.shape();
    let (n, l, c) = (sh[0], sh[1], sh[2]);
    y.reshape(&[n, l, heads, c / heads])?.permute(&[0, 2, 1, 3])
}

/// NCHW features to [N, H·W, C] tokens.
fn to_tokens<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let sh = x.shape();
    x.permute(&[0, 2, 3, 1])?.reshape(&[sh[0], sh[2] * sh[3], sh[1]])
}

/// Query/key/value tensors seen by the attention of one PPSA call.
#[derive(Debug, Clone)]
pub struct PpsaTrace<T: Float> {
    pub q: Value<T>,
    pub k: Value<T>,
    pub v: Value<T>,
    pub kv_tokens: usize,
}

pub fn ppsa_forward<'t, T: Float>(
    x: &Var<'t, T>,
    s: &Scope<'_, 't, T>,
    heads: usize,
    ratios: &[usize],
) -> Result<(Var<'t, T>, PpsaTrace<T>)> {
    let sh = x.shape();
    ensure_dim!(sh.len() == 4, "ppsa: expected NCHW input, got {sh:?}");
    let (n, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    ensure_dim!(heads > 0 && c % heads == 0, "ppsa: {c} channels not divisible by {heads} heads");
    let mut pooled = Vec::with_capacity(ratios.len());
    for &r in ratios {
        ensure_dim!(h % r == 0 && w % r == 0, "ppsa: {h}x{w} not divisible by pooling ratio {r}");
        let p = x.pool2d(PoolMode::Avg, r)?.add(&x.pool2d(PoolMode::Max, r)?)?;
        pooled.push(to_tokens(&p)?);
    }
    let kv = Var::concat(&pooled, 1)?;
    let q = projection(&to_tokens(x)?, s, "q_proj", heads)?;
    let k = projection(&kv, s, "k_proj", heads)?;
    let v = projection(&kv, s, "v_proj", heads)?;
    let att = q.attention(&k, &v)?;
    let y = att
        .permute(&[0, 2, 1, 3])?
        .reshape(&[n, h, w, c])?
        .permute(&[0, 3, 1, 2])?;
    let out = conv(&y, s, "out_proj")?;
    let trace = PpsaTrace {
        kv_tokens: kv.shape()[1],
        q: q.value(),
        k: k.value(),
        v: v.value(),
    };
    Ok((out, trace))
}

#[derive(Debug, Clone)]
pub struct CabTrace<T: Float> {
    /// Sigmoid channel gate, [N, C, 1, 1].
    pub gate: Value<T>,
}

pub fn cab_forward<'t, T: Float>(x: &Var<'t, T>, s: &Scope<'_, 't, T>) -> Result<(Var<'t, T>, CabTrace<T>)> {
    let f = conv(&conv(x, s, "conv1")?.gelu()?, s, "conv2")?;
    let gate = conv(&conv(&f.global_avg_pool()?, s, "ca_reduce")?.gelu()?, s, "ca_expand")?.sigmoid()?;
    let out = f.mul_channels(&gate)?;
    Ok((out, CabTrace { gate: gate.value() }))
}

#[derive(Debug, Clone)]
pub struct SpalTrace<T: Float> {
    pub f_ln: Value<T>,
    pub f_u: Value<T>,
    pub f_c: Value<T>,
    pub f_p: Value<T>,
    pub f_p_bar: Value<T>,
    pub f_c_bar: Value<T>,
    pub f_e: Value<T>,
    pub f_bar: Value<T>,
    pub f_hat: Value<T>,
    pub h: Value<T>,
    pub ppsa: PpsaTrace<T>,
    pub cab: CabTrace<T>,
}

pub fn spal_forward<'t, T: Float>(
    f: &Var<'t, T>,
    s: &Scope<'_, 't, T>,
    cfg: &ModelConfig,
) -> Result<(Var<'t, T>, SpalTrace<T>)> {
    let half = cfg.c1 / 2;
    let f_ln = norm(f, s, "norm1")?;
    let f_u = conv(&f_ln, s, "lift")?;
    let parts = f_u.split(1, &[half, half])?;
    let (f_c, f_p) = (parts[0], parts[1]);
    let (f_p_bar, ppsa) = ppsa_forward(&f_p, &s.sub("ppsa"), cfg.heads, &cfg.pool_ratios)?;
    let (f_c_bar, cab) = cab_forward(&f_c, &s.sub("cab"))?;
    let f_e = conv(&f_c_bar.sub(&f_p_bar)?, s, "err_proj")?;
    let f_bar = conv(&f_p_bar, s, "fuse_proj")?.add(&f_e)?;
    let f_hat = f_bar.add(f)?;
    let ffn = s.sub("ffn");
    let z = pointwise(&norm(&f_hat, s, "norm2")?, &ffn, "fc1")?.gelu()?;
    let h = pointwise(&z, &ffn, "fc2")?.add(&f_hat)?;
    let trace = SpalTrace {
        f_ln: f_ln.value(),
        f_u: f_u.value(),
        f_c: f_c.value(),
        f_p: f_p.value(),
        f_p_bar: f_p_bar.value(),
        f_c_bar: f_c_bar.value(),
        f_e: f_e.value(),
        f_bar: f_bar.value(),
        f_hat: f_hat.value(),
        h: h.value(),
        ppsa,
        cab,
    };
    Ok((h, trace))
}

#[derive(Debug, Clone)]
pub struct CptbTrace<T: Float> {
    pub h_init: Value<T>,
    pub h_p: Value<T>,
    pub h_c: Value<T>,
    pub h_p_bar: Value<T>,
    pub h_c_bar: Value<T>,
    pub h_e: Value<T>,
    pub h_bar: Value<T>,
    pub h_out: Value<T>,
    pub spals: Vec<SpalTrace<T>>,
}

pub fn cptb_forward<'t, T: Float>(
    h_prev: &Var<'t, T>,
    s: &Scope<'_, 't, T>,
    cfg: &ModelConfig,
) -> Result<(Var<'t, T>, CptbTrace<T>)> {
    let half = cfg.c2 / 2;
    let h_init = conv(h_prev, s, "init")?;
    let parts = h_init.split(1, &[half, half])?;
    let (h_p, h_c) = (parts[0], parts[1]);
    let mut z = h_p;
    let mut spals = Vec::with_capacity(cfg.n_spal);
    for j in 0..cfg.n_spal {
        let (next, t) = spal_forward(&z, &s.sub("spal").sub(j), cfg)?;
        z = next;
        spals.push(t);
    }
    let h_p_bar = conv(&z, s, "aggregate")?;
    let (h_c_bar, _) = cab_forward(&h_c, &s.sub("cab"))?;
    let h_e = h_p_bar.sub(&h_c_bar)?;
    let h_bar = conv(&h_e, s, "err_proj")?.add(&conv(&h_p_bar, s, "fuse_proj")?)?;
    let h_out = h_bar.add(h_prev)?;
    let trace = CptbTrace {
        h_init: h_init.value(),
        h_p: h_p.value(),
        h_c: h_c.value(),
        h_p_bar: h_p_bar.value(),
        h_c_bar: h_c_bar.value(),
        h_e: h_e.value(),
        h_bar: h_bar.value(),
        h_out: h_out.value(),
        spals,
    };
    Ok((h_out, trace))
}

#[derive(Debug, Clone)]
pub struct PrmTrace<T: Float> {
    pub i_lr_hat: Value<T>,
    pub diff: Value<T>,
    pub f_lr_hat: Value<T>,
    pub i_sr: Value<T>,
}

pub fn prm_forward<'t, T: Float>(
    sr_hat: &Var<'t, T>,
    lr: &Var<'t, T>,
    s: &Scope<'_, 't, T>,
) -> Result<(Var<'t, T>, PrmTrace<T>)> {
    let (hs, ls) = (sr_hat.shape(), lr.shape());
    ensure_dim!(
        hs.len() == 4 && ls.len() == 4 && hs[..2] == ls[..2],
        "prm: estimate {hs:?} and input {ls:?} disagree"
    );
    ensure_dim!(
        hs[2] % ls[2] == 0 && hs[3] % ls[3] == 0 && hs[2] / ls[2] == hs[3] / ls[3] && hs[2] > ls[2],
        "prm: {:?} is not an integer upscale of {:?}",
        &hs[2..],
        &ls[2..]
    );
    let i_lr_hat = sr_hat.resize_bilinear(ls[2], ls[3])?;
    let diff = i_lr_hat.sub(lr)?;
    let f_lr_hat = conv(&conv(&diff, s, "conv1")?.gelu()?, s, "conv2")?;
    let i_sr = f_lr_hat.resize_bilinear(hs[2], hs[3])?.add(sr_hat)?;
    let trace = PrmTrace {
        i_lr_hat: i_lr_hat.value(),
        diff: diff.value(),
        f_lr_hat: f_lr_hat.value(),
        i_sr: i_sr.value(),
    };
    Ok((i_sr, trace))
}
