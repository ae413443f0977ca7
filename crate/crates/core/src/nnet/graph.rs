//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in
//! topological order. [`Graph::backward`] walks the tape in reverse and
//! accumulates vector-Jacobian products into each leaf. Complex values are
//! carried as real arrays with a trailing `(re, im)` axis, so every complex
//! operation is just a real operation on the pair and real-valued losses get
//! correct gradients without any Wirtinger bookkeeping.
//!
//! A graph is meant to live for one forward/backward pass; dropping it
//! releases every intermediate.

use std::cell::Cell;

use super::tensor::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static LIVE_NODES: Cell<usize> = const { Cell::new(0) };
}

/// Number of graph nodes currently alive on this thread.
pub fn live_nodes() -> usize {
    LIVE_NODES.with(|c| c.get())
}

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub out: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    needs: Vec<bool>,
}

impl BackwardCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.needs[i]
    }
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    retain: bool,
}

impl Drop for Node {
    fn drop(&mut self) {
        LIVE_NODES.with(|c| c.set(c.get() - 1));
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_node(&mut self, node: Node) -> Var {
        LIVE_NODES.with(|c| c.set(c.get() + 1));
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
            retain: false,
        })
    }

    /// Records a differentiable leaf; its gradient is kept after backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
            retain: true,
        })
    }

    /// Keeps the gradient of an intermediate node after backward.
    pub fn watch(&mut self, v: Var) {
        self.nodes[v.0].retain = true;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records the result of an operation. The backward closure is dropped
    /// when no parent requires a gradient.
    pub(crate) fn op(&mut self, value: Tensor, parents: &[Var], backward: BackwardFn) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_node(Node {
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            retain: false,
        })
    }

    /// Propagates gradients from a scalar node to every retained node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut kept: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(backward) = &node.backward {
                let ctx = BackwardCtx {
                    grad: &grad,
                    out: &node.value,
                    inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                    needs: node
                        .parents
                        .iter()
                        .map(|&p| self.nodes[p].requires_grad)
                        .collect(),
                };
                let parent_grads = backward(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), self.nodes[p].value.len());
                    match &mut grads[p] {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += b;
                            }
                        }
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            if node.retain {
                kept[idx] = Some(grad);
            }
        }
        Ok(Gradients { grads: kept })
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when no gradient reached the node.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], |g| g.to_vec())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
