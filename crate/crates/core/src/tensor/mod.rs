//! Dense matrices on a reverse-mode differentiation tape.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar walks the records in reverse order and
//! accumulates adjoints into a [`Gradients`] table. A tape is single-threaded;
//! build a fresh one per forward pass.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use ndarray::Array2;

use crate::error::{bail, Result};

mod gradcheck;
mod ops;
mod segment;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR};
pub use ops::{concat_cols, concat_rows};
pub use segment::SegmentMode;

/// Dense row-major matrix of `f64`.
pub type Matrix = Array2<f64>;

type BackwardFn = Box<dyn Fn(&Matrix) -> Vec<Matrix>>;

struct Node {
    value: Rc<Matrix>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &*self.value())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&self, value: Matrix, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.var(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.var(value, false)
    }

    pub fn scalar(&self, x: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    pub fn zeros(&self, rows: usize, cols: usize) -> Var<'_> {
        self.constant(Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an operation. The backward rule maps the output adjoint to one
    /// adjoint per parent, in order. It is dropped when no parent needs a gradient.
    pub(crate) fn record<F>(&self, value: Matrix, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Matrix) -> Vec<Matrix> + 'static,
    {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: requires_grad.then(|| Box::new(backward) as BackwardFn),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            bail!(Usage, "loss was recorded on a different tape");
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.dim() != (1, 1) {
            bail!(Usage, "backward needs a scalar loss, got shape {:?}", nodes[loss.id].value.dim());
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        let mut visited = 0;
        if !nodes[loss.id].requires_grad {
            return Ok(Gradients { grads, visited });
        }
        grads[loss.id] = Some(Array2::ones((1, 1)));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let node = &nodes[id];
            if let Some(rule) = &node.backward {
                let parent_grads = rule(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.dim(), nodes[p].value.dim(), "adjoint shape of node {p}");
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    visited: usize,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if it received one.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Number of tape nodes whose adjoint was propagated.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Matrix> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn to_matrix(&self) -> Matrix {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Value of a 1×1 variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar");
        v[[0, 0]]
    }
}
