//! Reverse-mode tape.
//!
//! Every primitive that touches a tracked [`Var`] appends one node holding a
//! backward closure. Node ids are assigned in execution order, so a reverse
//! sweep over ids is a valid reverse topological order. Untracked values
//! (constants, or results computed only from constants) never enter the tape,
//! which makes inference with constant parameters allocation-light: an
//! intermediate is freed as soon as its last [`Var`] handle drops.

use std::cell::RefCell;
use std::rc::Rc;

use super::{NnError, Tensor};

/// Given the output gradient and a per-input "needs gradient" mask, returns
/// one optional gradient buffer per input.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

/// A value produced on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    value: Rc<Tensor>,
    node: Option<usize>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// First element; intended for `[1]`-shaped results.
    pub fn item(&self) -> f64 {
        self.value.data()[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn id(&self) -> Option<usize> {
        self.node
    }
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.shape())
            .field("node", &self.node)
            .finish()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, t: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            inputs: Vec::new(),
            backward: None,
        });
        Var {
            value: Rc::new(t),
            node: Some(nodes.len() - 1),
        }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        Var {
            value: Rc::new(t),
            node: None,
        }
    }

    /// Records the result of a primitive. `backward` is only kept when at
    /// least one input is tracked.
    pub(crate) fn record<F>(
        &self,
        op: &'static str,
        value: Tensor,
        inputs: &[&Var],
        backward: F,
    ) -> Result<Var, NnError>
    where
        F: Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite { op });
        }
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.node).collect();
        let node = if ids.iter().any(Option::is_some) {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                inputs: ids,
                backward: Some(Box::new(backward)),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Ok(Var {
            value: Rc::new(value),
            node,
        })
    }

    /// Back-propagates from a single-element `root`.
    pub fn backward(&self, root: &Var) -> Result<Gradients, NnError> {
        if root.numel() != 1 {
            return Err(NnError::NonScalarRoot(root.shape().to_vec()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root_id) = root.node else {
            return Ok(Gradients { grads });
        };
        grads[root_id] = Some(vec![1.0]);
        for id in (0..=root_id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &mask);
            for (slot, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(pid), Some(ig)) = (slot, ig) {
                    match &mut grads[*pid] {
                        Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                        empty => *empty = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf parameters after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a tracked leaf, or `None` if no path reaches it.
    pub fn get(&self, v: &Var) -> Option<&[f64]> {
        v.node.and_then(|id| self.grads.get(id)?.as_deref())
    }

    /// Gradient of a tracked leaf, zeros when unreachable.
    pub fn get_or_zeros(&self, v: &Var) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; v.numel()], <[f64]>::to_vec)
    }
}
