//! Named parameter storage shared by layers, optimizers and checkpoints.

use ndarray::Array2;
use rand::Rng;

use crate::error::{bail, Result};
use crate::tensor::{Gradients, Matrix, Tape, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            bail!(Usage, "duplicate parameter name {name:?}");
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Glorot-uniform matrix: entries in `±sqrt(6 / (rows + cols))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        self.add(name, glorot(rows, cols, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        if value.dim() != self.values[id.0].dim() {
            bail!(
                Shape,
                "parameter {:?} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].dim(),
                value.dim()
            );
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Records every parameter as a gradient-carrying leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind_with(tape, |_| true)
    }

    /// Records parameters as leaves; those rejected by `trainable` become constants.
    pub fn bind_with<'t>(&self, tape: &'t Tape, trainable: impl Fn(ParamId) -> bool) -> Bound<'t> {
        let vars = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.var(v.clone(), trainable(ParamId(i))))
            .collect();
        Bound { vars }
    }
}

pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

/// Parameters of a [`ParamStore`] recorded on one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Binding over explicit variables, one per store entry in store order.
    pub fn from_vars(vars: Vec<Var<'t>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    /// Gradient of every parameter that received one, in store order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<(ParamId, Matrix)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| grads.wrt(*v).map(|g| (ParamId(i), g.clone())))
            .collect()
    }
}
