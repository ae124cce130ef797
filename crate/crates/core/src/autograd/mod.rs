//! Taped reverse-mode differentiation.
//!
//! Every primitive's backward rule is itself written with taped [`Var`]
//! operations. Running [`grad`] with `create_graph = true` therefore records
//! the backward pass onto the same tape, and a second [`grad`] call over a
//! scalar built from those gradients yields second-order and mixed partials
//! (double backpropagation). With `create_graph = false` the same rules run
//! with recording switched off.

mod check;
mod ops;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::{Rc, Weak};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use check::{check_grad, compare_gradients, finite_difference, relative_error, GradCheckReport};
pub(crate) use ops::Op;
pub use ops::{BatchNormCache, BatchNormOutput};

pub(crate) struct Node<T: Scalar> {
    op: Op<T>,
    inputs: Vec<Var<T>>,
    value: Rc<Tensor<T>>,
}

pub(crate) struct TapeInner<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: Cell<bool>,
}

/// Record of primitive applications, in creation (topological) order.
///
/// A tape is single-threaded by construction (`Rc`-based). Build a fresh tape
/// per training step; dropping it frees every recorded intermediate.
pub struct Tape<T: Scalar = f32> {
    inner: Rc<TapeInner<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                recording: Cell::new(true),
            }),
        }
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        let value = Rc::new(value);
        let id = self.inner.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value: value.clone(),
        });
        Var {
            value,
            slot: Some(Slot {
                tape: Rc::downgrade(&self.inner),
                id,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> TapeInner<T> {
    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }
}

#[derive(Clone)]
struct Slot<T: Scalar> {
    tape: Weak<TapeInner<T>>,
    id: usize,
}

/// A tensor value, optionally registered on a [`Tape`].
///
/// Values never change after creation. A `Var` without a tape slot is a
/// constant and receives no gradient.
#[derive(Clone)]
pub struct Var<T: Scalar = f32> {
    value: Rc<Tensor<T>>,
    slot: Option<Slot<T>>,
}

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id())
            .field("value", &self.value)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    pub fn constant(value: Tensor<T>) -> Self {
        Var {
            value: Rc::new(value),
            slot: None,
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn dims(&self) -> &[usize] {
        self.value.dims()
    }

    pub fn requires_grad(&self) -> bool {
        self.slot.as_ref().is_some_and(|s| s.tape.strong_count() > 0)
    }

    /// Tape handle, if any.
    pub fn id(&self) -> Option<usize> {
        self.slot.as_ref().map(|s| s.id)
    }

    /// The tape this value is recorded on, while it is alive.
    pub fn tape(&self) -> Option<Tape<T>> {
        let inner = self.slot.as_ref()?.tape.upgrade()?;
        Some(Tape { inner })
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Self {
        Var {
            value: self.value.clone(),
            slot: None,
        }
    }

    /// Records `op` with `inputs` producing `value`. The result is a constant
    /// when no input is on a recording tape.
    pub(crate) fn record(op: Op<T>, inputs: &[&Var<T>], value: Tensor<T>) -> Result<Var<T>> {
        let mut tape: Option<Rc<TapeInner<T>>> = None;
        for v in inputs {
            if let Some(slot) = &v.slot {
                if let Some(t) = slot.tape.upgrade() {
                    match &tape {
                        Some(existing) if !Rc::ptr_eq(existing, &t) => {
                            return Err(Error::invalid(
                                op.name(),
                                "inputs are recorded on different tapes",
                            ));
                        }
                        _ => tape = Some(t),
                    }
                }
            }
        }
        let value = Rc::new(value);
        let Some(tape) = tape.filter(|t| t.recording.get()) else {
            return Ok(Var { value, slot: None });
        };
        let id = tape.push(Node {
            op,
            inputs: inputs.iter().map(|v| (*v).clone()).collect(),
            value: value.clone(),
        });
        Ok(Var {
            value,
            slot: Some(Slot {
                tape: Rc::downgrade(&tape),
                id,
            }),
        })
    }
}

/// Restores the tape's recording flag on drop.
struct RecordingGuard<'a, T: Scalar> {
    tape: &'a TapeInner<T>,
    previous: bool,
}

impl<T: Scalar> Drop for RecordingGuard<'_, T> {
    fn drop(&mut self) {
        self.tape.recording.set(self.previous);
    }
}

/// Reverse-mode gradients of the scalar `output` with respect to each of `wrt`.
///
/// Inputs that `output` does not depend on get zero gradients. With
/// `create_graph`, the returned gradients are recorded on the tape and can be
/// differentiated again; otherwise they are constants.
pub fn grad<T: Scalar>(output: &Var<T>, wrt: &[&Var<T>], create_graph: bool) -> Result<Vec<Var<T>>> {
    if !output.value.is_scalar() {
        return Err(Error::NonScalarOutput {
            dims: output.dims().to_vec(),
        });
    }
    let zeros = || {
        wrt.iter()
            .map(|v| Var::constant(Tensor::zeros(v.dims())))
            .collect::<Vec<_>>()
    };
    let Some((tape, out_id)) = output
        .slot
        .as_ref()
        .and_then(|s| s.tape.upgrade().map(|t| (t, s.id)))
    else {
        return Ok(zeros());
    };

    let n = out_id + 1;
    // relevant[i]: node i lies on a path from some wrt leaf.
    let mut relevant = vec![false; n];
    for v in wrt {
        if let Some(slot) = &v.slot {
            if slot.tape.upgrade().is_some_and(|t| Rc::ptr_eq(&t, &tape)) && slot.id < n {
                relevant[slot.id] = true;
            }
        }
    }
    {
        let nodes = tape.nodes.borrow();
        for i in 0..n {
            if !relevant[i] {
                relevant[i] = nodes[i]
                    .inputs
                    .iter()
                    .any(|inp| inp.id().is_some_and(|j| relevant[j]));
            }
        }
    }
    if !relevant[out_id] {
        return Ok(zeros());
    }

    let _guard = RecordingGuard {
        tape: &tape,
        previous: tape.recording.replace(create_graph),
    };

    let mut keep = vec![false; n];
    for v in wrt {
        if let Some(j) = v.id().filter(|&j| j < n) {
            keep[j] = true;
        }
    }
    let mut grads: Vec<Option<Var<T>>> = vec![None; n];
    grads[out_id] = Some(Var::constant(Tensor::ones(output.dims())));
    for i in (0..n).rev() {
        if !relevant[i] {
            continue;
        }
        let Some(g) = grads[i].clone() else {
            continue;
        };
        if !keep[i] {
            grads[i] = None;
        }
        let (op, inputs, value) = {
            let nodes = tape.nodes.borrow();
            let node = &nodes[i];
            (node.op.clone(), node.inputs.clone(), node.value.clone())
        };
        if matches!(op, Op::Leaf) {
            continue;
        }
        let needs: Vec<bool> = inputs
            .iter()
            .map(|inp| inp.id().is_some_and(|j| j < n && relevant[j]))
            .collect();
        if !needs.iter().any(|&b| b) {
            continue;
        }
        if create_graph && !op.twice_differentiable() {
            return Err(Error::NotTwiceDifferentiable { op: op.name() });
        }
        let out = Var {
            value,
            slot: Some(Slot {
                tape: Rc::downgrade(&tape),
                id: i,
            }),
        };
        let input_grads = op.vjp(&inputs, &out, &g, &needs)?;
        for ((inp, need), ig) in inputs.iter().zip(&needs).zip(input_grads) {
            if !need {
                continue;
            }
            let (Some(j), Some(ig)) = (inp.id(), ig) else {
                continue;
            };
            grads[j] = Some(match grads[j].take() {
                Some(acc) => acc.add(&ig)?,
                None => ig,
            });
        }
    }

    wrt.iter()
        .map(|v| {
            let g = v
                .slot
                .as_ref()
                .filter(|s| s.tape.upgrade().is_some_and(|t| Rc::ptr_eq(&t, &tape)))
                .and_then(|s| grads.get(s.id).cloned().flatten());
            Ok(match g {
                Some(g) if create_graph => g,
                Some(g) => g.detach(),
                None => Var::constant(Tensor::zeros(v.dims())),
            })
        })
        .collect()
}
