//! Reverse-mode automatic differentiation over a per-step tape.
//!
//! Every operation on a [`Var`] appends a node holding its forward value and,
//! when any input requires a gradient, a backward rule. [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because a node can only reference earlier nodes.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub mod fault;

/// Backward rule: receives the output gradient and a mask of which inputs
/// need gradients, returns one optional gradient per input.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Float> {
    value: Rc<Tensor<T>>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    /// Accumulated gradient, kept only for leaves.
    leaf_grad: Option<Vec<T>>,
}

/// Recording of one forward pass. Not shared across threads.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. It takes part in differentiation iff the tensor has
    /// `requires_grad` set.
    pub fn leaf(&self, tensor: Tensor<T>) -> Var<'_, T> {
        let requires_grad = tensor.requires_grad();
        self.push_node(Rc::new(tensor), Vec::new(), None, requires_grad)
    }

    /// Records a leaf that requires a gradient.
    pub fn param(&self, mut tensor: Tensor<T>) -> Var<'_, T> {
        tensor.set_requires_grad(true);
        self.leaf(tensor)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, mut tensor: Tensor<T>) -> Var<'_, T> {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    fn push_node(
        &self,
        value: Rc<Tensor<T>>,
        inputs: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            inputs,
            backward,
            requires_grad,
            leaf_grad: None,
        });
        Var { tape: self, id }
    }

    /// Records the result of an operation. `make_backward` is only invoked
    /// when at least one input requires a gradient, so inference passes carry
    /// no saved state.
    pub(crate) fn record<F>(&self, value: Tensor<T>, inputs: &[Var<'_, T>], make_backward: F) -> Result<Var<'_, T>>
    where
        F: FnOnce() -> BackwardFn<T>,
    {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "operation produced non-finite values (shape {:?})",
                value.shape()
            )));
        }
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        let backward = if requires_grad { Some(make_backward()) } else { None };
        Ok(self.push_node(Rc::new(value), ids, backward, requires_grad))
    }

    /// Propagates d(loss)/d(leaf) into every leaf that requires a gradient.
    /// Gradients accumulate across calls until [`Tape::zero_grads`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Contract(
                "loss is detached: no leaf requiring a gradient reaches it".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if nodes[id].backward.is_none() {
                let node = &mut nodes[id];
                match &mut node.leaf_grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.leaf_grad = Some(g),
                }
                continue;
            }
            let node = &nodes[id];
            let mask: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = (node.backward.as_ref().unwrap())(&g, &mask);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for ((&input, ig), &need) in node.inputs.iter().zip(input_grads).zip(&mask) {
                let (Some(ig), true) = (ig, need) else { continue };
                debug_assert_eq!(ig.len(), nodes[input].value.numel());
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, shaped like its value.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let node = &nodes[var.id];
        node.leaf_grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).unwrap())
    }

    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.leaf_grad = None;
        }
    }

    /// Drops every recorded node.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Owned copy of the forward value.
    pub fn to_tensor(&self) -> Tensor<T> {
        let mut t = (*self.value()).clone();
        t.set_requires_grad(false);
        t
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("variables belong to different tapes".into()))
        }
    }
}
