//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation executed while it is in
//! recording mode, in execution order. Because an operation can only consume
//! values that already exist, that order is a topological order of the
//! computation graph, and [`Tape::backward`] is a single reverse sweep.
//!
//! Values that do not depend on any tracked leaf are never recorded; on a
//! tape created with [`Tape::inference`] nothing is recorded at all and
//! intermediates are released as soon as their [`Var`] handles drop.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Backward rule of one recorded operation.
pub(crate) trait Backward<T: Real> {
    fn inputs(&self) -> Vec<&Var<T>>;

    /// Gradients w.r.t. each entry of [`Backward::inputs`], in order. `None`
    /// is allowed for inputs that do not require a gradient.
    fn backward(&self, output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    slot: Option<usize>,
    value: Tensor<T>,
    op: Option<Box<dyn Backward<T>>>,
}

/// Handle to a value produced on a [`Tape`].
pub struct Var<T: Real = f32>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Self(Rc::clone(&self.0))
    }
}

impl<T: Real> core::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("slot", &self.0.slot)
            .field("shape", &self.0.value.shape())
            .finish()
    }
}

impl<T: Real> Var<T> {
    #[inline]
    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    /// True when gradients flow back through this value.
    #[inline]
    pub fn requires_grad(&self) -> bool {
        self.0.slot.is_some()
    }
}

pub struct Tape<T: Real = f32> {
    recording: bool,
    nodes: RefCell<Vec<Var<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            recording: true,
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A tape that records nothing; every value it produces is detached.
    pub fn inference() -> Self {
        Self {
            recording: false,
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        if self.recording {
            self.track(value, None)
        } else {
            Self::detached(value)
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<T> {
        Self::detached(value)
    }

    fn detached(value: Tensor<T>) -> Var<T> {
        Var(Rc::new(Node {
            slot: None,
            value,
            op: None,
        }))
    }

    fn track(&self, value: Tensor<T>, op: Option<Box<dyn Backward<T>>>) -> Var<T> {
        let mut nodes = self.nodes.borrow_mut();
        let var = Var(Rc::new(Node {
            slot: Some(nodes.len()),
            value,
            op,
        }));
        nodes.push(var.clone());
        var
    }

    /// Records the result of an operation.
    pub(crate) fn push(
        &self,
        name: &'static str,
        value: Tensor<T>,
        op: impl Backward<T> + 'static,
    ) -> Result<Var<T>> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let tracked = self.recording && op.inputs().iter().any(|v| v.requires_grad());
        Ok(if tracked {
            self.track(value, Some(Box::new(op)))
        } else {
            Self::detached(value)
        })
    }

    /// Propagates `d loss / d v` to every tracked value `v` the loss depends
    /// on. Contributions from fan-out are summed.
    pub fn backward(&self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.value().len() != 1 {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        let root = loss.0.slot.ok_or(Error::Detached)?;
        let nodes = self.nodes.borrow();
        if root >= nodes.len() || !Rc::ptr_eq(&nodes[root].0, &loss.0) {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root + 1];
        grads[root] = Some(Tensor::ones(loss.shape()));
        for slot in (0..=root).rev() {
            let node = &nodes[slot].0;
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let Some(grad) = grads[slot].take() else {
                continue;
            };
            let inputs = op.inputs();
            let contributions = op.backward(&node.value, &grad);
            for (input, contribution) in inputs.into_iter().zip(contributions) {
                let (Some(target), Some(contribution)) = (input.0.slot, contribution) else {
                    continue;
                };
                debug_assert_eq!(contribution.shape(), input.shape());
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contribution)?,
                    empty => *empty = Some(contribution),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, `None` if the loss does not depend on it.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        let slot = var.0.slot?;
        self.grads.get(slot)?.as_ref()
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        let slot = var.0.slot?;
        self.grads.get_mut(slot)?.take()
    }
}
