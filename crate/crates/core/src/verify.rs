//! Finite-difference audits of whole blocks in float64.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::gradcheck::{default_eps, rel_error};
use crate::model::{
    cab_forward, cptb_forward, init_weights, mbt_forward, ppsa_forward, prm_forward, spal_forward, Bound, ModelConfig,
    ParamTree,
};
use crate::tensor::{Rng, Tensor};
use crate::train::l1_loss;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Groups whose analytic and numeric gradients both stay below this magnitude
/// count as vanishing (key biases under softmax shift invariance).
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Ppsa,
    Cab,
    Spal,
    Cptb,
    Prm,
    Full,
}

impl Block {
    pub const ALL: [Block; 6] = [Block::Ppsa, Block::Cab, Block::Spal, Block::Cptb, Block::Prm, Block::Full];

    pub fn name(self) -> &'static str {
        match self {
            Block::Ppsa => "ppsa",
            Block::Cab => "cab",
            Block::Spal => "spal",
            Block::Cptb => "cptb",
            Block::Prm => "prm",
            Block::Full => "full",
        }
    }

    /// Parameter-name prefix owned by the block.
    fn prefix(self) -> &'static str {
        match self {
            Block::Ppsa => "cptb.0.spal.0.ppsa.",
            Block::Cab => "cptb.0.cab.",
            Block::Spal => "cptb.0.spal.0.",
            Block::Cptb => "cptb.0.",
            Block::Prm => "prm.",
            Block::Full => "",
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Block {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Block::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown block '{s}' (expected ppsa|cab|spal|cptb|prm|full)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub rel_error: f64,
    /// Largest magnitude seen in either gradient.
    pub scale: f64,
}

impl GroupError {
    pub fn passed(&self) -> bool {
        self.rel_error < GRADCHECK_TOLERANCE || self.scale < GRADCHECK_ABS_FLOOR
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub block: Block,
    pub groups: Vec<GroupError>,
}

impl BlockReport {
    /// Largest relative error among groups with a non-vanishing gradient.
    pub fn max_error(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.scale >= GRADCHECK_ABS_FLOOR)
            .map(|g| g.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&GroupError> {
        self.groups.iter().filter(|g| !g.passed()).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Elements probed per tensor; 0 probes every element.
    pub samples_per_tensor: usize,
    pub eps: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seed: 0, samples_per_tensor: 16, eps: default_eps::<f64>() }
    }
}

struct Case {
    cfg: ModelConfig,
    params: ParamTree<f64>,
    inputs: Vec<Tensor<f64>>,
    weights: Tensor<f64>,
}

fn evaluate(block: Block, case: &Case, params: &ParamTree<f64>, inputs: &[Tensor<f64>], grads: bool) -> Result<(f64, Vec<Option<Tensor<f64>>>, Option<ParamTree<f64>>)> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let xs: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = forward_loss(block, case, &bound, &xs, &tape)?;
    let value = loss.value().item()?;
    if !grads {
        return Ok((value, Vec::new(), None));
    }
    tape.backward(loss)?;
    let input_grads = xs.iter().map(|x| x.grad()).collect();
    let mut tree = params.clone();
    tree.zero_grads();
    tree.accumulate_grads(&bound)?;
    Ok((value, input_grads, Some(tree)))
}

fn forward_loss<'t>(block: Block, case: &Case, bound: &Bound<'t, f64>, xs: &[Var<'t, f64>], tape: &'t Tape<f64>) -> Result<Var<'t, f64>> {
    let root = bound.root();
    let cfg = &case.cfg;
    let weights = tape.constant(case.weights.clone());
    let project = |y: Var<'t, f64>| y.mul(&weights)?.sum();
    match block {
        Block::Ppsa => project(ppsa_forward(&xs[0], &root.sub("cptb.0.spal.0.ppsa"), cfg.heads, &cfg.pool_ratios)?.0),
        Block::Cab => project(cab_forward(&xs[0], &root.sub("cptb.0.cab"))?.0),
        Block::Spal => project(spal_forward(&xs[0], &root.sub("cptb.0.spal.0"), cfg)?.0),
        Block::Cptb => project(cptb_forward(&xs[0], &root.sub("cptb.0"), cfg)?.0),
        Block::Prm => project(prm_forward(&xs[0], &xs[1], &root.sub("prm"))?.0),
        Block::Full => l1_loss(&mbt_forward(&xs[0], &root, cfg)?.0, &weights),
    }
}

fn build_case(block: Block, seed: u64) -> Result<Case> {
    let cfg = ModelConfig::tiny(2);
    let mut rng = Rng::derive(seed, &[0x9c]);
    // every tensor, including the zero-initialized heads, gets a random value
    let base = init_weights::<f64>(&cfg, seed)?;
    let params = base.map_values(|_, t| {
        let noise = Tensor::<f64>::rand_normal(t.shape().to_vec(), 0.15, &mut rng);
        Tensor::from_fn(t.shape().to_vec(), |i| t.data()[i] + noise.data()[i])
    });
    let mut rand = |shape: Vec<usize>| Tensor::<f64>::rand_uniform(shape, 0.0, 1.0, &mut rng);
    let (inputs, out_shape) = match block {
        Block::Ppsa | Block::Cab | Block::Spal => (vec![rand(vec![1, cfg.c2 / 2, 8, 8])], vec![1, cfg.c2 / 2, 8, 8]),
        Block::Cptb => (vec![rand(vec![1, cfg.channels, 8, 8])], vec![1, cfg.channels, 8, 8]),
        Block::Prm => (vec![rand(vec![1, 3, 16, 16]), rand(vec![1, 3, 8, 8])], vec![1, 3, 16, 16]),
        Block::Full => (vec![rand(vec![1, 3, 8, 8])], vec![1, 3, 16, 16]),
    };
    let weights = Tensor::rand_uniform(out_shape, -1.0, 1.0, &mut rng);
    Ok(Case { cfg, params, inputs, weights })
}

fn sample_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    if k == 0 || n <= k {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = rng.permutation(n).into_iter().take(k).collect();
    idx.sort_unstable();
    idx
}

/// Compares analytic and central-difference gradients for every parameter
/// tensor the block owns, plus its inputs.
pub fn check_block(block: Block, opts: &GradcheckOptions) -> Result<BlockReport> {
    let case = build_case(block, opts.seed)?;
    let (_, input_grads, tree) = evaluate(block, &case, &case.params, &case.inputs, true)?;
    let tree = tree.unwrap();
    let mut rng = Rng::derive(opts.seed, &[0x5a]);
    let mut groups = Vec::new();
    let eps = opts.eps;
    let fd = |params: &ParamTree<f64>, inputs: &[Tensor<f64>]| evaluate(block, &case, params, inputs, false).map(|r| r.0);

    for (k, x) in case.inputs.iter().enumerate() {
        let analytic = input_grads[k].clone().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
        let idx = sample_indices(x.numel(), opts.samples_per_tensor, &mut rng);
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for &i in &idx {
            let mut probe = case.inputs.clone();
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let plus = fd(&case.params, &probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let minus = fd(&case.params, &probe)?;
            a.push(analytic.data()[i]);
            n.push((plus - minus) / (2.0 * eps));
        }
        groups.push(group(format!("input.{k}"), a, n)?);
    }

    let mut probe = case.params.clone();
    let names: Vec<String> = case
        .params
        .names()
        .filter(|n| n.starts_with(block.prefix()))
        .map(String::from)
        .collect();
    for name in names {
        let analytic = tree.get(&name).unwrap().grad().unwrap().to_vec();
        let numel = analytic.len();
        let idx = sample_indices(numel, opts.samples_per_tensor, &mut rng);
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for &i in &idx {
            let orig = probe.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + eps;
            let plus = fd(&probe, &case.inputs)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - eps;
            let minus = fd(&probe, &case.inputs)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            a.push(analytic[i]);
            n.push((plus - minus) / (2.0 * eps));
        }
        groups.push(group(name, a, n)?);
    }
    Ok(BlockReport { block, groups })
}

fn group(name: String, a: Vec<f64>, n: Vec<f64>) -> Result<GroupError> {
    let checked = a.len();
    let a = Tensor::new(vec![checked], a)?;
    let n = Tensor::new(vec![checked], n)?;
    let scale = a.data().iter().chain(n.data()).fold(0.0, |m, v| f64::max(m, v.abs()));
    Ok(GroupError { name, checked, rel_error: rel_error(&a, &n), scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_names_parse() {
        for b in Block::ALL {
            assert_eq!(b.name().parse::<Block>().unwrap(), b);
        }
        assert!("swin".parse::<Block>().is_err());
    }

    #[test]
    fn prm_and_cab_pass() {
        for b in [Block::Prm, Block::Cab] {
            let r = check_block(b, &GradcheckOptions::default()).unwrap();
            assert!(r.passed(), "{b}: {:?}", r.failures());
            assert!(r.groups.len() > 2);
        }
    }

    #[test]
    fn key_bias_gradient_vanishes() {
        let r = check_block(Block::Ppsa, &GradcheckOptions::default()).unwrap();
        let g = r.groups.iter().find(|g| g.name.ends_with("k_proj.bias")).unwrap();
        assert!(g.scale < GRADCHECK_ABS_FLOOR);
        assert!(r.groups.iter().filter(|g| g.scale < GRADCHECK_ABS_FLOOR).count() == 1);
    }
}
