use std::collections::HashMap;

use indexmap::IndexMap;

use super::config::ModelConfig;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Rng, Tensor};

/// Ordered collection of named learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTree<T: Float> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Float> Default for ParamTree<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamTree<T> {
    pub fn new() -> Self {
        Self { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name '{name}'")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// True when both trees hold the same names in the same order.
    pub fn same_names(&self, other: &ParamTree<T>) -> bool {
        self.tensors.len() == other.tensors.len() && self.tensors.keys().zip(other.tensors.keys()).all(|(a, b)| a == b)
    }

    pub fn bit_eq(&self, other: &ParamTree<T>) -> bool {
        self.same_names(other) && self.tensors.values().zip(other.tensors.values()).all(|(a, b)| a.bit_eq(b))
    }

    /// Records every tensor as a gradient-requiring leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        self.bind_with(tape, true)
    }

    /// Records every tensor as a constant leaf (inference).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        self.bind_with(tape, false)
    }

    fn bind_with<'t>(&self, tape: &'t Tape<T>, grad: bool) -> Bound<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if grad { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Adds the tape gradients of `bound` into each tensor's gradient slot.
    /// Parameters the loss never reached receive an explicit zero gradient.
    pub fn accumulate_grads(&mut self, bound: &Bound<'_, T>) -> Result<()> {
        for (name, tensor) in self.tensors.iter_mut() {
            let var = bound
                .vars
                .get(name)
                .ok_or_else(|| Error::Contract(format!("parameter '{name}' was not bound")))?;
            match var.grad() {
                Some(g) => tensor.accumulate_grad(g.data())?,
                None => tensor.accumulate_grad(&vec![T::zero(); tensor.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Float>(&self) -> ParamTree<U> {
        ParamTree {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn map_values(&self, mut f: impl FnMut(&str, &Tensor<T>) -> Tensor<T>) -> ParamTree<T> {
        ParamTree {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), f(k, v))).collect(),
        }
    }
}

/// Parameters recorded on a tape, looked up by hierarchical name.
pub struct Bound<'t, T: Float> {
    vars: HashMap<String, Var<'t, T>>,
}

impl<'t, T: Float> Bound<'t, T> {
    pub fn var(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter '{name}'")))
    }

    pub fn root(&self) -> Scope<'_, 't, T> {
        Scope { bound: self, prefix: String::new() }
    }
}

/// Name prefix view into [`Bound`] parameters.
pub struct Scope<'a, 't, T: Float> {
    bound: &'a Bound<'t, T>,
    prefix: String,
}

impl<'a, 't, T: Float> Scope<'a, 't, T> {
    pub fn sub(&self, name: impl std::fmt::Display) -> Scope<'a, 't, T> {
        Scope {
            bound: self.bound,
            prefix: format!("{}{name}.", self.prefix),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.bound.var(&format!("{}{name}", self.prefix))
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

struct SpecBuilder {
    specs: Vec<ParamSpec>,
}

impl SpecBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let init = if zero { Init::Zeros } else { Init::TruncNormal };
        self.push(format!("{prefix}.weight"), vec![cout, cin, k, k], init);
        self.push(format!("{prefix}.bias"), vec![cout], Init::Zeros);
    }

    fn linear(&mut self, prefix: &str, cin: usize, cout: usize) {
        self.push(format!("{prefix}.weight"), vec![cout, cin], Init::TruncNormal);
        self.push(format!("{prefix}.bias"), vec![cout], Init::Zeros);
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}.weight"), vec![c], Init::Ones);
        self.push(format!("{prefix}.bias"), vec![c], Init::Zeros);
    }

    fn cab(&mut self, prefix: &str, c: usize, squeeze: usize) {
        let hidden = cab_hidden(c, squeeze);
        self.conv(&format!("{prefix}.conv1"), c, hidden, 3, false);
        self.conv(&format!("{prefix}.conv2"), hidden, c, 3, false);
        self.conv(&format!("{prefix}.ca_reduce"), c, hidden, 1, false);
        self.conv(&format!("{prefix}.ca_expand"), hidden, c, 1, false);
    }

    fn ppsa(&mut self, prefix: &str, c: usize) {
        self.linear(&format!("{prefix}.q_proj"), c, c);
        self.linear(&format!("{prefix}.k_proj"), c, c);
        self.linear(&format!("{prefix}.v_proj"), c, c);
        self.conv(&format!("{prefix}.out_proj"), c, c, 1, false);
    }

    fn spal(&mut self, prefix: &str, c_in: usize, cfg: &ModelConfig) {
        let half = cfg.c1 / 2;
        self.norm(&format!("{prefix}.norm1"), c_in);
        self.conv(&format!("{prefix}.lift"), c_in, cfg.c1, 1, false);
        self.ppsa(&format!("{prefix}.ppsa"), half);
        self.cab(&format!("{prefix}.cab"), half, cfg.cab_squeeze);
        self.conv(&format!("{prefix}.err_proj"), half, c_in, 1, false);
        self.conv(&format!("{prefix}.fuse_proj"), half, c_in, 1, false);
        self.norm(&format!("{prefix}.norm2"), c_in);
        self.linear(&format!("{prefix}.ffn.fc1"), c_in, cfg.ffn_ratio * c_in);
        self.linear(&format!("{prefix}.ffn.fc2"), cfg.ffn_ratio * c_in, c_in);
    }

    fn cptb(&mut self, prefix: &str, cfg: &ModelConfig) {
        let half = cfg.c2 / 2;
        self.conv(&format!("{prefix}.init"), cfg.channels, cfg.c2, 1, false);
        for j in 0..cfg.n_spal {
            self.spal(&format!("{prefix}.spal.{j}"), half, cfg);
        }
        self.conv(&format!("{prefix}.aggregate"), half, half, 3, false);
        self.cab(&format!("{prefix}.cab"), half, cfg.cab_squeeze);
        self.conv(&format!("{prefix}.err_proj"), half, cfg.channels, 1, false);
        self.conv(&format!("{prefix}.fuse_proj"), half, cfg.channels, 1, false);
    }
}

/// Hidden width of a channel attention block.
pub fn cab_hidden(c: usize, squeeze: usize) -> usize {
    (c / squeeze).max(1)
}

/// Every learnable tensor of the model in forward order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut b = SpecBuilder { specs: Vec::new() };
    let c = cfg.channels;
    let r = cfg.scale;
    b.conv("conv_first", 3, c, 3, false);
    for i in 0..cfg.n_cptb {
        b.cptb(&format!("cptb.{i}"), cfg);
    }
    b.conv("conv_after_body", c, c, 3, false);
    b.conv("rec.expand", c, 3 * r * r, 3, false);
    b.conv("rec.out", 3, 3, 3, true);
    b.conv("prm.conv1", 3, cfg.prm_hidden, 1, true);
    b.conv("prm.conv2", cfg.prm_hidden, 3, 1, true);
    b.specs
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    param_specs(cfg).iter().map(ParamSpec::numel).sum()
}

/// Parameter counts grouped by top-level module (`cptb.N` kept separate).
pub fn module_param_counts(cfg: &ModelConfig) -> Vec<(String, usize)> {
    let mut groups: Vec<(String, usize)> = Vec::new();
    for spec in param_specs(cfg) {
        let mut parts = spec.name.split('.');
        let head = parts.next().unwrap();
        let key = if head == "cptb" {
            format!("cptb.{}", parts.next().unwrap())
        } else {
            head.to_string()
        };
        match groups.last_mut() {
            Some((k, n)) if *k == key => *n += spec.numel(),
            _ => groups.push((key, spec.numel())),
        }
    }
    groups
}

pub const INIT_STD: f64 = 0.02;

/// Deterministic initialization: truncated normal (std 0.02, cut at 2 std)
/// for weights, zero biases, unit norm scales, and zeros for the final
/// reconstruction conv and both correction-module convs.
pub fn init_weights<T: Float>(cfg: &ModelConfig, seed: u64) -> Result<ParamTree<T>> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let mut tree = ParamTree::new();
    for spec in param_specs(cfg) {
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(spec.shape),
            Init::Ones => Tensor::full(spec.shape, T::one()),
            Init::TruncNormal => Tensor::from_fn(spec.shape, |_| T::lit(rng.trunc_normal(INIT_STD))),
        };
        tree.insert(spec.name, t)?;
    }
    Ok(tree)
}
