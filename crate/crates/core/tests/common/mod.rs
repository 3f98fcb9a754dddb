#![allow(dead_code)]

use dgn_core::Graph;
use dgn_testkit::{self as tk, Mat};
use ndarray::Array2;
use rand::Rng;

pub fn rows(m: &Array2<f64>) -> Mat {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn array(m: &Mat, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((m.len(), cols), |(i, j)| m[i][j])
}

pub fn bias(m: &Array2<f64>) -> Vec<f64> {
    m.row(0).to_vec()
}

/// Random symmetrized graph on `n` nodes with `d` node features and optional arc features.
pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p: f64, d: usize, arc_dim: usize) -> Graph {
    let arcs = tk::random_undirected(rng, n, p);
    graph_from(rng, n, arcs, d, arc_dim).symmetrize()
}

pub fn graph_from<R: Rng>(rng: &mut R, n: usize, arcs: Vec<(usize, usize)>, d: usize, arc_dim: usize) -> Graph {
    let x = array(&tk::random_matrix(rng, n, d, 1.0), d);
    let e = (arc_dim > 0).then(|| array(&tk::random_matrix(rng, arcs.len(), arc_dim, 1.0), arc_dim));
    Graph::new(n, arcs, x, e).unwrap()
}
