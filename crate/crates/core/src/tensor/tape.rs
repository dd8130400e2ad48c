use std::cell::RefCell;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded op.
///
/// Receives the gradient of the op's output and a mask of which inputs need a
/// gradient; returns one entry per input (`None` where not needed).
pub(crate) type Backward<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Real> {
    parents: Vec<Option<usize>>,
    backward: Option<Backward<T>>,
}

/// Value flowing through a computation, optionally tracked on a [`Tape`].
///
/// A `Var` without a node is a constant: gradients do not flow into it.
#[derive(Clone, Debug)]
pub struct Var<T: Real = f32> {
    value: Tensor<T>,
    node: Option<usize>,
}

impl<T: Real> Var<T> {
    pub fn constant(value: Tensor<T>) -> Self {
        Self { value, node: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<T> {
        self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Identity of the tape node backing this value, if tracked.
    pub fn id(&self) -> Option<usize> {
        self.node
    }
}

/// Ordered record of differentiable operations.
///
/// Nodes are appended as ops execute, so node ids are already a topological
/// order; [`Tape::backward`] walks them once in reverse. A tape built with
/// [`Tape::no_grad`] records nothing and every op returns constants.
pub struct Tape<T: Real = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            enabled: true,
        }
    }

    pub fn no_grad() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            enabled: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers a trainable leaf. On a no-grad tape this is a constant.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        if !self.enabled {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: Vec::new(),
            backward: None,
        });
        Var {
            value,
            node: Some(nodes.len() - 1),
        }
    }

    /// Appends an op whose output is `value`. The op is only recorded when at
    /// least one input is tracked.
    pub(crate) fn record(&self, value: Tensor<T>, inputs: &[&Var<T>], backward: Backward<T>) -> Var<T> {
        if !self.enabled || inputs.iter().all(|v| v.node.is_none()) {
            return Var::constant(value);
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            parents: inputs.iter().map(|v| v.node).collect(),
            backward: Some(backward),
        });
        Var {
            value,
            node: Some(nodes.len() - 1),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::full(loss.shape(), T::one()));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(out_grad) = grads[id].take() else {
                continue;
            };
            let need: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let input_grads = backward(&out_grad, &need);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            for (parent, g) in node.parents.iter().zip(input_grads) {
                if let (Some(p), Some(g)) = (parent, g) {
                    match &mut grads[*p] {
                        Some(acc) => acc.add_assign(&g),
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves reached by a backward sweep.
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `var`, or `None` if it is untracked or unreachable from the loss.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.grads.get(id)?.as_ref())
    }

    /// Gradient of `var`, zeros when unreachable.
    pub fn get_or_zeros(&self, var: &Var<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}
