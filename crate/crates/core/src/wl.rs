//! 1-dimensional Weisfeiler-Lehman color refinement.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::graph::{Graph, NeighborhoodIndex, NeighborhoodMode};

/// Outcome of [`wl_refine`].
#[derive(Clone, Debug)]
pub struct WlRefinement {
    /// Node colors per round; `colors[0]` holds the initial colors. When the
    /// refinement stabilized, the last entry is the round that split nothing.
    pub colors: Vec<Vec<u64>>,
    /// Number of rounds that strictly refined the partition.
    pub iterations: usize,
    pub stable: bool,
    /// Hash of the sorted color histogram of every recorded round.
    pub graph_hash: u64,
}

impl WlRefinement {
    /// Number of distinct colors per recorded round.
    pub fn class_counts(&self) -> Vec<usize> {
        self.colors.iter().map(|c| count_classes(c)).collect()
    }

    /// Sorted color multiset of round `t`.
    pub fn histogram(&self, t: usize) -> Vec<u64> {
        let mut h = self.colors[t].clone();
        h.sort_unstable();
        h
    }
}

fn hash_of<T: Hash>(value: &T) -> u64 {
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

fn count_classes(colors: &[u64]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

/// Initial colors: hash of each feature row's bit pattern. Zero-width features
/// give every node the same color.
pub fn initial_colors(graph: &Graph) -> Vec<u64> {
    graph
        .node_features()
        .rows()
        .into_iter()
        .map(|row| hash_of(&row.iter().map(|x| x.to_bits()).collect::<Vec<_>>()))
        .collect()
}

/// Refines colors by rehashing (own color, sorted in-neighbor colors) until the
/// partition stops splitting or `max_iters` rounds have run.
pub fn wl_refine(graph: &Graph, max_iters: usize) -> WlRefinement {
    let index = NeighborhoodIndex::new(graph, NeighborhoodMode::Open);
    let mut colors = vec![initial_colors(graph)];
    let mut iterations = 0;
    let mut stable = false;
    let mut scratch = Vec::new();
    for _ in 0..max_iters {
        let prev = colors.last().expect("initial colors present");
        let next: Vec<u64> = (0..graph.num_nodes())
            .map(|v| {
                scratch.clear();
                scratch.extend(index.neighbors(v).iter().map(|&u| prev[u]));
                scratch.sort_unstable();
                hash_of(&(prev[v], &scratch))
            })
            .collect();
        let refined = count_classes(&next) > count_classes(prev);
        colors.push(next);
        if !refined {
            stable = true;
            break;
        }
        iterations += 1;
    }
    let histograms: Vec<Vec<u64>> = colors
        .iter()
        .map(|c| {
            let mut h = c.clone();
            h.sort_unstable();
            h
        })
        .collect();
    WlRefinement {
        graph_hash: hash_of(&histograms),
        colors,
        iterations,
        stable,
    }
}

/// True when 1-WL cannot tell the two graphs apart within `max_iters` rounds.
pub fn wl_equivalent(a: &Graph, b: &Graph, max_iters: usize) -> bool {
    wl_refine(a, max_iters).graph_hash == wl_refine(b, max_iters).graph_hash
}
