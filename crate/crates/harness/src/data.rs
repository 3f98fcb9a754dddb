//! Synthetic generators and train/validation/test assembly.

use std::collections::BTreeSet;

use dgn_core::graph::{GraphTarget, NodeTargets};
use dgn_core::{corpus, Graph};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Generator, Task};
use crate::error::{HarnessError, Result};

/// Independent random streams derived from one seed.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SAMPLING: u64 = 6;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two equal blocks; a pair is joined with probability `p_in` inside a block and
/// `p_out` across. Labels are block ids, the single feature is standard normal
/// noise plus `-1` (block 0) or `+1` (block 1).
pub fn gen_two_community(n_per_block: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Graph> {
    for p in [p_in, p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(HarnessError::Data(format!("probability {p} outside [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * n_per_block;
    let block = |v: usize| v / n_per_block.max(1);
    let mut arcs = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if block(u) == block(v) { p_in } else { p_out };
            if rng.random_bool(p) {
                arcs.push((u, v));
            }
        }
    }
    let x = Array2::from_shape_fn((n, 1), |(v, _)| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        noise + if block(v) == 0 { -1.0 } else { 1.0 }
    });
    let labels = (0..n).map(block).collect();
    Ok(Graph::new(n, arcs, x, None)?
        .with_node_targets(Some(NodeTargets::Classes(labels)))?
        .symmetrize())
}

/// Graph `i` is a cycle (label 1) when `i` is even and a path (label 0)
/// otherwise, on a uniform node count in `[min_n, max_n]`; every node has the
/// constant feature 1.
pub fn gen_cycles_vs_paths(num_graphs: usize, min_n: usize, max_n: usize, seed: u64) -> Result<Vec<Graph>> {
    if min_n < 3 || max_n < min_n {
        return Err(HarnessError::Data(format!("need 3 <= min_n <= max_n, got {min_n}..{max_n}")));
    }
    (0..num_graphs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let n = rng.random_range(min_n..=max_n);
            let cycle = i % 2 == 0;
            let mut arcs: Vec<(usize, usize)> = (0..n - 1).map(|v| (v, v + 1)).collect();
            if cycle {
                arcs.push((n - 1, 0));
            }
            Ok(Graph::featureless(n, arcs)?
                .with_graph_target(Some(GraphTarget::Class(usize::from(cycle))))?
                .symmetrize())
        })
        .collect()
}

/// Graph list named by the data section of `config`.
pub fn load_graphs(config: &ExperimentConfig) -> Result<Vec<Graph>> {
    let d = &config.data;
    let seed = config.seed;
    match (d.generator, &d.path) {
        (Some(Generator::TwoCommunity), _) => (0..d.num_graphs)
            .into_par_iter()
            .map(|i| gen_two_community(d.n_per_block, d.p_in, d.p_out, seed.wrapping_add(i as u64)))
            .collect(),
        (Some(Generator::CyclesVsPaths), _) => gen_cycles_vs_paths(d.num_graphs, d.min_nodes, d.max_nodes, seed),
        (None, Some(path)) => Ok(corpus::load_corpus(path)?),
        (None, None) => Err(HarnessError::Config("data needs a generator or a path".into())),
    }
}

/// Labeled node pairs for link prediction; `true` marks an edge.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSplit {
    /// Observed graph: the input graph without the held-out edges.
    pub graph: Graph,
    pub train: Vec<((usize, usize), bool)>,
    pub test: Vec<((usize, usize), bool)>,
}

#[derive(Clone, Debug)]
pub enum Dataset {
    Transductive {
        graph: Graph,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Graphs {
        train: Vec<Graph>,
        val: Vec<Graph>,
        test: Vec<Graph>,
    },
    Links(LinkSplit),
}

impl Dataset {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        let graphs = load_graphs(config)?;
        let d = &config.data;
        match config.task {
            Task::NodeClassificationTransductive => {
                let graph = single(graphs)?;
                let n = graph.num_nodes();
                for &v in d.train_nodes.iter().chain(&d.val_nodes).chain(&d.test_nodes) {
                    if v >= n {
                        return Err(HarnessError::Data(format!("mask node {v} outside graph of {n} nodes")));
                    }
                }
                if !matches!(graph.node_targets(), Some(NodeTargets::Classes(_))) {
                    return Err(HarnessError::Data("transductive task needs class node targets".into()));
                }
                Ok(Dataset::Transductive {
                    graph,
                    train: d.train_nodes.clone(),
                    val: d.val_nodes.clone(),
                    test: d.test_nodes.clone(),
                })
            }
            Task::LinkPrediction => Ok(Dataset::Links(link_split(&single(graphs)?, d.holdout_fraction, config.seed)?)),
            _ => {
                let (train, val, test) = split_graphs(graphs, d.split, config.seed);
                Ok(Dataset::Graphs { train, val, test })
            }
        }
    }

    /// Every graph the dataset holds.
    pub fn graphs(&self) -> Vec<&Graph> {
        match self {
            Dataset::Transductive { graph, .. } => vec![graph],
            Dataset::Graphs { train, val, test } => train.iter().chain(val).chain(test).collect(),
            Dataset::Links(l) => vec![&l.graph],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs().first().map_or(0, |g| g.feature_dim())
    }
}

fn single(mut graphs: Vec<Graph>) -> Result<Graph> {
    if graphs.is_empty() {
        return Err(HarnessError::Data("dataset holds no graph".into()));
    }
    Ok(graphs.swap_remove(0))
}

/// Shuffles with the split stream and cuts at the rounded fractions.
pub fn split_graphs(graphs: Vec<Graph>, fractions: [f64; 3], seed: u64) -> (Vec<Graph>, Vec<Graph>, Vec<Graph>) {
    let n = graphs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, stream::SPLIT));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let mut slots: Vec<Option<Graph>> = graphs.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<Graph> { ids.iter().map(|&i| slots[i].take().expect("each graph once")).collect() };
    let train = take(&order[..n_train]);
    let val = take(&order[n_train..n_train + n_val]);
    let test = take(&order[n_train + n_val..]);
    (train, val, test)
}

/// Holds out `⌈fraction · |E|⌉` undirected edges and as many non-edges for
/// testing; training uses the remaining edges and an equal number of other non-edges.
pub fn link_split(graph: &Graph, fraction: f64, seed: u64) -> Result<LinkSplit> {
    let n = graph.num_nodes();
    let edges: BTreeSet<(usize, usize)> = graph
        .arcs()
        .iter()
        .filter(|(u, v)| u != v)
        .map(|&(u, v)| (u.min(v), u.max(v)))
        .collect();
    let mut edges: Vec<_> = edges.into_iter().collect();
    let mut non_edges: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
        .filter(|p| edges.binary_search(p).is_err())
        .collect();
    if edges.is_empty() || non_edges.is_empty() {
        return Err(HarnessError::Data("link prediction needs both edges and non-edges".into()));
    }
    let mut rng = stream_rng(seed, stream::SPLIT);
    edges.shuffle(&mut rng);
    non_edges.shuffle(&mut rng);
    let held = ((fraction * edges.len() as f64).ceil() as usize).min(edges.len() - 1);
    let (test_pos, train_pos) = edges.split_at(held);
    let test_neg = &non_edges[..held.min(non_edges.len())];
    let rest = &non_edges[test_neg.len()..];
    let train_neg = &rest[..train_pos.len().min(rest.len())];

    let held_set: BTreeSet<(usize, usize)> = test_pos.iter().copied().collect();
    let kept: Vec<usize> = (0..graph.num_arcs())
        .filter(|&e| {
            let (u, v) = graph.arcs()[e];
            !held_set.contains(&(u.min(v), u.max(v)))
        })
        .collect();
    let arcs = kept.iter().map(|&e| graph.arcs()[e]).collect();
    let arc_features = (graph.arc_feature_dim() > 0).then(|| graph.arc_features().select(ndarray::Axis(0), &kept));
    let observed = Graph::new(n, arcs, graph.node_features().clone(), arc_features)?.symmetrize();
    let label = |pairs: &[(usize, usize)], y: bool| pairs.iter().map(move |&p| (p, y)).collect::<Vec<_>>();
    let mut train = label(train_pos, true);
    train.extend(label(train_neg, false));
    let mut test = label(test_pos, true);
    test.extend(label(test_neg, false));
    Ok(LinkSplit {
        graph: observed,
        train,
        test,
    })
}
