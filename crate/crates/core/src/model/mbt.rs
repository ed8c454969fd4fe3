use std::rc::Rc;

use super::blocks::{conv, cptb_forward, prm_forward, CptbTrace, PrmTrace};
use super::config::ModelConfig;
use super::params::{ParamTree, Scope};
use crate::autograd::{Tape, Var};
use crate::error::{ensure_dim, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone)]
pub struct MbtTrace<T: Float> {
    pub f0: Rc<Tensor<T>>,
    pub cptbs: Vec<CptbTrace<T>>,
    pub body: Rc<Tensor<T>>,
    /// Interpolation skip plus reconstruction head, before the correction module.
    pub sr_hat: Rc<Tensor<T>>,
    pub prm: PrmTrace<T>,
}

/// Full model on an [N, 3, H, W] input in [0, 1]; returns [N, 3, rH, rW].
pub fn mbt_forward<'t, T: Float>(
    lr: &Var<'t, T>,
    s: &Scope<'_, 't, T>,
    cfg: &ModelConfig,
) -> Result<(Var<'t, T>, MbtTrace<T>)> {
    let sh = lr.shape();
    ensure_dim!(sh.len() == 4 && sh[1] == 3, "mbt: expected [N, 3, H, W], got {sh:?}");
    let m = cfg.spatial_multiple();
    ensure_dim!(
        sh[2] % m == 0 && sh[3] % m == 0,
        "mbt: {}x{} input not divisible by {m}; pad first",
        sh[2],
        sh[3]
    );
    let r = cfg.scale;
    let f0 = conv(lr, s, "conv_first")?;
    let mut h = f0;
    let mut cptbs = Vec::with_capacity(cfg.n_cptb);
    for i in 0..cfg.n_cptb {
        let (next, t) = cptb_forward(&h, &s.sub("cptb").sub(i), cfg)?;
        h = next;
        cptbs.push(t);
    }
    let body = conv(&h, s, "conv_after_body")?;
    let rec = s.sub("rec");
    let detail = conv(&conv(&body.add(&f0)?, &rec, "expand")?.pixel_shuffle(r)?, &rec, "out")?;
    let sr_hat = lr.resize_bilinear(r * sh[2], r * sh[3])?.add(&detail)?;
    let (sr, prm) = prm_forward(&sr_hat, lr, &s.sub("prm"))?;
    let trace = MbtTrace {
        f0: f0.value(),
        cptbs,
        body: body.value(),
        sr_hat: sr_hat.value(),
        prm,
    };
    Ok((sr, trace))
}

/// Gradient-free forward pass over frozen parameters.
pub fn infer<T: Float>(params: &ParamTree<T>, cfg: &ModelConfig, lr: &Tensor<T>) -> Result<Tensor<T>> {
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let x = tape.constant(lr.clone());
    let (y, _) = mbt_forward(&x, &bound.root(), cfg)?;
    Ok(y.to_tensor())
}
