//! Deep graph networks on a small reverse-mode autodiff engine.
//!
//! Graphs are arc lists with node and arc feature matrices; layers map node
//! state matrices to node state matrices on a [`tensor::Tape`].

pub mod corpus;
pub mod edge_attention;
pub mod error;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod nn;
pub mod params;
pub mod pooling;
pub mod readout;
pub mod tensor;
pub mod wl;

pub use error::{Error, Result};
pub use graph::{BatchedGraph, Graph, NeighborhoodIndex, NeighborhoodMode};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::{Matrix, Tape, Var};
