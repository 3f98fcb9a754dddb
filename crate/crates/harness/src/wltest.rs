//! Reports graph pairs that 1-WL color refinement cannot tell apart.

use serde::Serialize;

use dgn_core::wl::{wl_equivalent, wl_refine};
use dgn_core::Graph;

/// Refinement rounds beyond which no partition of these sizes can still split.
pub fn rounds_for(graphs: &[Graph]) -> usize {
    graphs.iter().map(Graph::num_nodes).max().unwrap_or(0) + 1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WlReport {
    pub num_graphs: usize,
    /// Per graph hash of the refinement, in corpus order.
    pub hashes: Vec<String>,
    /// Index pairs `(i, j)`, `i < j`, that refinement does not distinguish.
    pub indistinguishable: Vec<(usize, usize)>,
}

pub fn wl_report(graphs: &[Graph]) -> WlReport {
    let rounds = rounds_for(graphs);
    let hashes = graphs
        .iter()
        .map(|g| format!("{:016x}", wl_refine(g, rounds).graph_hash))
        .collect::<Vec<_>>();
    let mut indistinguishable = Vec::new();
    for i in 0..graphs.len() {
        for j in i + 1..graphs.len() {
            if hashes[i] == hashes[j] && wl_equivalent(&graphs[i], &graphs[j], rounds) {
                indistinguishable.push((i, j));
            }
        }
    }
    WlReport {
        num_graphs: graphs.len(),
        hashes,
        indistinguishable,
    }
}
