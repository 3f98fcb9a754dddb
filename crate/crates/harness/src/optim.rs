//! First-order optimizers over a [`ParamStore`].

use std::collections::BTreeMap;

use dgn_core::{Matrix, ParamId, ParamStore};

use crate::config::OptimizerKind;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Moments {
    m: Matrix,
    v: Matrix,
    steps: i32,
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    state: BTreeMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter with a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)]) {
        let lr = self.learning_rate;
        for (id, g) in grads {
            match self.kind {
                OptimizerKind::Sgd => store.get_mut(*id).scaled_add(-lr, g),
                OptimizerKind::Adam => {
                    let s = self.state.entry(*id).or_insert_with(|| Moments {
                        m: Matrix::zeros(g.raw_dim()),
                        v: Matrix::zeros(g.raw_dim()),
                        steps: 0,
                    });
                    s.steps += 1;
                    s.m.zip_mut_with(g, |m, &g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
                    s.v.zip_mut_with(g, |v, &g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
                    let c1 = 1.0 - ADAM_BETA1.powi(s.steps);
                    let c2 = 1.0 - ADAM_BETA2.powi(s.steps);
                    let w = store.get_mut(*id);
                    ndarray::Zip::from(w).and(&s.m).and(&s.v).for_each(|w, &m, &v| {
                        *w -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
                    });
                }
            }
        }
    }
}
