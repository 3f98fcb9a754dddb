//! Graph-level readouts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{Activation, Mlp};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    #[default]
    Sum,
    Mean,
    Max,
    /// `ρ(Σ_v ψ(h_v))` with learned `ψ` and `ρ`.
    Deepsets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub mode: ReadoutMode,
    /// `[in, ..., out]` widths of the per-node map (deepsets only).
    #[serde(default)]
    pub inner_dims: Vec<usize>,
    /// `[in, ..., out]` widths of the map applied after summation (deepsets only).
    #[serde(default)]
    pub outer_dims: Vec<usize>,
}

impl ReadoutConfig {
    pub fn new(mode: ReadoutMode) -> Self {
        ReadoutConfig {
            mode,
            inner_dims: Vec::new(),
            outer_dims: Vec::new(),
        }
    }

    pub fn deepsets(inner_dims: Vec<usize>, outer_dims: Vec<usize>) -> Self {
        ReadoutConfig {
            mode: ReadoutMode::Deepsets,
            inner_dims,
            outer_dims,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Readout {
    pub mode: ReadoutMode,
    pub inner: Option<Mlp>,
    pub outer: Option<Mlp>,
}

impl Readout {
    pub fn new<R: Rng + ?Sized>(config: &ReadoutConfig, store: &mut ParamStore, name: &str, rng: &mut R) -> Result<Self> {
        let (inner, outer) = if config.mode == ReadoutMode::Deepsets {
            let (i, o) = (&config.inner_dims, &config.outer_dims);
            if i.last() != o.first() {
                bail!(Usage, "deepsets inner output {:?} must equal outer input {:?}", i.last(), o.first());
            }
            (
                Some(Mlp::new(store, &format!("{name}.inner"), i, Activation::Relu, Activation::Relu, rng)?),
                Some(Mlp::new(store, &format!("{name}.outer"), o, Activation::Relu, Activation::Identity, rng)?),
            )
        } else {
            (None, None)
        };
        Ok(Readout {
            mode: config.mode,
            inner,
            outer,
        })
    }

    /// A readout without parameters.
    pub fn fixed(mode: ReadoutMode) -> Result<Self> {
        if mode == ReadoutMode::Deepsets {
            bail!(Usage, "deepsets readout has parameters");
        }
        Ok(Readout {
            mode,
            inner: None,
            outer: None,
        })
    }

    /// Output width for node states of width `in_dim`.
    pub fn out_dim(&self, in_dim: usize) -> usize {
        self.outer.as_ref().map_or(in_dim, Mlp::out_dim)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.inner.iter().chain(&self.outer).flat_map(Mlp::params).collect()
    }

    /// `[num_graphs × d_out]` from node states `h` and their graph ids.
    pub fn forward<'t>(&self, p: &Bound<'t>, h: Var<'t>, node_to_graph: &[usize], num_graphs: usize) -> Result<Var<'t>> {
        if node_to_graph.len() != h.rows() {
            bail!(Shape, "{} graph ids for {} node rows", node_to_graph.len(), h.rows());
        }
        if let Some(&g) = node_to_graph.iter().find(|&&g| g >= num_graphs) {
            bail!(Structural, "graph id {g} out of range for {num_graphs} graphs");
        }
        match self.mode {
            ReadoutMode::Sum => h.segment_sum(node_to_graph, num_graphs),
            ReadoutMode::Mean => h.segment_mean(node_to_graph, num_graphs),
            ReadoutMode::Max => {
                let (out, empty) = h.segment_max(node_to_graph, num_graphs)?;
                if let Some(g) = empty.iter().position(|&e| e) {
                    bail!(Usage, "max readout of empty graph {g}");
                }
                Ok(out)
            }
            ReadoutMode::Deepsets => {
                let (inner, outer) = (self.inner.as_ref().expect("deepsets"), self.outer.as_ref().expect("deepsets"));
                let z = inner.forward(p, h)?.segment_sum(node_to_graph, num_graphs)?;
                outer.forward(p, z)
            }
        }
    }
}
