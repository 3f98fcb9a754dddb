//! Directed attributed graphs, neighborhood indices and batching.
//!
//! Neighborhoods are defined by incoming arcs: `N_v = { u | (u, v) is an arc }`.
//! Every layer in the crate consumes this convention.

use std::collections::{HashSet, VecDeque};

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Per-node supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl NodeTargets {
    pub fn len(&self) -> usize {
        match self {
            NodeTargets::Classes(c) => c.len(),
            NodeTargets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, ids: &[usize]) -> NodeTargets {
        match self {
            NodeTargets::Classes(c) => NodeTargets::Classes(ids.iter().map(|&i| c[i]).collect()),
            NodeTargets::Values(v) => NodeTargets::Values(ids.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Graph-level supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphTarget {
    Class(usize),
    Scalar(f64),
    Vector(Vec<f64>),
}

impl GraphTarget {
    pub fn class(&self) -> Option<usize> {
        match self {
            GraphTarget::Class(c) => Some(*c),
            _ => None,
        }
    }

    /// Regression view of the target.
    pub fn values(&self) -> Vec<f64> {
        match self {
            GraphTarget::Class(c) => vec![*c as f64],
            GraphTarget::Scalar(x) => vec![*x],
            GraphTarget::Vector(v) => v.clone(),
        }
    }
}

/// A directed attributed graph.
///
/// Node ids are positions in the node list and arcs keep their input order.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    arcs: Vec<(usize, usize)>,
    node_features: Array2<f64>,
    arc_features: Array2<f64>,
    node_targets: Option<NodeTargets>,
    graph_target: Option<GraphTarget>,
    symmetrized: bool,
}

/// Stacks feature rows into a matrix, rejecting ragged input.
///
/// `width` is used when `rows` is empty.
pub fn matrix_from_rows(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    let d = rows.first().map_or(width, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        bail!(Format, "row {i} has width {} but row 0 has width {d}", r.len());
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), d), flat).expect("row widths checked"))
}

/// Builds a graph from row-oriented input.
pub fn build_graph(
    num_nodes: usize,
    arcs: Vec<(usize, usize)>,
    node_features: &[Vec<f64>],
    arc_features: Option<&[Vec<f64>]>,
    node_targets: Option<NodeTargets>,
    graph_target: Option<GraphTarget>,
) -> Result<Graph> {
    let x = matrix_from_rows(node_features, 0)?;
    let a = match arc_features {
        Some(rows) => Some(matrix_from_rows(rows, 0)?),
        None => None,
    };
    Graph::new(num_nodes, arcs, x, a)?
        .with_node_targets(node_targets)?
        .with_graph_target(graph_target)
}

impl Graph {
    /// Creates a graph. `arc_features = None` means zero-width arc features.
    pub fn new(
        num_nodes: usize,
        arcs: Vec<(usize, usize)>,
        node_features: Array2<f64>,
        arc_features: Option<Array2<f64>>,
    ) -> Result<Self> {
        if let Some(&(u, v)) = arcs.iter().find(|(u, v)| *u >= num_nodes || *v >= num_nodes) {
            bail!(Structural, "arc ({u}, {v}) has an endpoint outside [0, {num_nodes})");
        }
        if node_features.nrows() != num_nodes {
            bail!(
                Format,
                "{} feature rows for {num_nodes} nodes",
                node_features.nrows()
            );
        }
        let arc_features = arc_features.unwrap_or_else(|| Array2::zeros((arcs.len(), 0)));
        if arc_features.nrows() != arcs.len() {
            bail!(
                Format,
                "{} arc feature rows for {} arcs",
                arc_features.nrows(),
                arcs.len()
            );
        }
        Ok(Graph {
            num_nodes,
            arcs,
            node_features,
            arc_features,
            node_targets: None,
            graph_target: None,
            symmetrized: false,
        })
    }

    /// Graph with `num_nodes` nodes carrying the constant feature `1.0`.
    pub fn featureless(num_nodes: usize, arcs: Vec<(usize, usize)>) -> Result<Self> {
        Graph::new(num_nodes, arcs, Array2::ones((num_nodes, 1)), None)
    }

    pub fn with_node_targets(mut self, targets: Option<NodeTargets>) -> Result<Self> {
        if let Some(t) = &targets {
            if t.len() != self.num_nodes {
                bail!(Format, "{} node targets for {} nodes", t.len(), self.num_nodes);
            }
        }
        self.node_targets = targets;
        Ok(self)
    }

    pub fn with_graph_target(mut self, target: Option<GraphTarget>) -> Result<Self> {
        self.graph_target = target;
        Ok(self)
    }

    pub fn with_node_features(mut self, x: Array2<f64>) -> Result<Self> {
        if x.nrows() != self.num_nodes {
            bail!(Format, "{} feature rows for {} nodes", x.nrows(), self.num_nodes);
        }
        self.node_features = x;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn node_features(&self) -> &Array2<f64> {
        &self.node_features
    }

    pub fn arc_features(&self) -> &Array2<f64> {
        &self.arc_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn arc_feature_dim(&self) -> usize {
        self.arc_features.ncols()
    }

    pub fn node_targets(&self) -> Option<&NodeTargets> {
        self.node_targets.as_ref()
    }

    pub fn graph_target(&self) -> Option<&GraphTarget> {
        self.graph_target.as_ref()
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    /// Replaces every arc by a pair of opposite arcs sharing the same features.
    ///
    /// Duplicate `(u, v)` pairs keep their first occurrence.
    pub fn symmetrize(&self) -> Graph {
        let mut seen = HashSet::with_capacity(2 * self.arcs.len());
        let mut arcs = Vec::with_capacity(2 * self.arcs.len());
        let mut source_rows = Vec::with_capacity(2 * self.arcs.len());
        for (i, &(u, v)) in self.arcs.iter().enumerate() {
            for pair in [(u, v), (v, u)] {
                if seen.insert(pair) {
                    arcs.push(pair);
                    source_rows.push(i);
                }
            }
        }
        let arc_features = self.arc_features.select(Axis(0), &source_rows);
        Graph {
            num_nodes: self.num_nodes,
            arcs,
            node_features: self.node_features.clone(),
            arc_features,
            node_targets: self.node_targets.clone(),
            graph_target: self.graph_target.clone(),
            symmetrized: true,
        }
    }

    /// In-neighbors of `v` together with the arc ids that reach it.
    ///
    /// In closed mode `v` is appended with no arc id unless it is already an in-neighbor.
    pub fn neighbors(&self, v: usize, mode: NeighborhoodMode) -> Result<Vec<(usize, Option<usize>)>> {
        if v >= self.num_nodes {
            bail!(Structural, "node {v} outside [0, {})", self.num_nodes);
        }
        let mut out: Vec<_> = self
            .arcs
            .iter()
            .enumerate()
            .filter(|(_, &(_, dst))| dst == v)
            .map(|(i, &(src, _))| (src, Some(i)))
            .collect();
        if mode == NeighborhoodMode::Closed && !out.iter().any(|&(u, _)| u == v) {
            out.push((v, None));
        }
        Ok(out)
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(_, v) in &self.arcs {
            deg[v] += 1;
        }
        deg
    }

    /// Dense adjacency with `A[u][v]` = number of arcs `u -> v`.
    pub fn dense_adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(u, v) in &self.arcs {
            a[[u, v]] += 1.0;
        }
        a
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`. Arc order is preserved.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        check_permutation(perm, self.num_nodes)?;
        let mut inverse = vec![0; perm.len()];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let arcs = self.arcs.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Ok(Graph {
            num_nodes: self.num_nodes,
            arcs,
            node_features: self.node_features.select(Axis(0), &inverse),
            arc_features: self.arc_features.clone(),
            node_targets: self.node_targets.as_ref().map(|t| t.select(&inverse)),
            graph_target: self.graph_target.clone(),
            symmetrized: self.symmetrized,
        })
    }

    /// Subgraph induced by `kept` (strictly increasing node ids), relabeled to `0..kept.len()`.
    pub fn induced_subgraph(&self, kept: &[usize]) -> Result<Graph> {
        if kept.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Usage, "kept node ids must be strictly increasing");
        }
        if kept.last().is_some_and(|&k| k >= self.num_nodes) {
            bail!(Structural, "kept node outside [0, {})", self.num_nodes);
        }
        let mut relabel = vec![usize::MAX; self.num_nodes];
        for (new, &old) in kept.iter().enumerate() {
            relabel[old] = new;
        }
        let mut arcs = Vec::new();
        let mut rows = Vec::new();
        for (i, &(u, v)) in self.arcs.iter().enumerate() {
            if relabel[u] != usize::MAX && relabel[v] != usize::MAX {
                arcs.push((relabel[u], relabel[v]));
                rows.push(i);
            }
        }
        Ok(Graph {
            num_nodes: kept.len(),
            arcs,
            node_features: self.node_features.select(Axis(0), kept),
            arc_features: self.arc_features.select(Axis(0), &rows),
            node_targets: self.node_targets.as_ref().map(|t| t.select(kept)),
            graph_target: self.graph_target.clone(),
            symmetrized: self.symmetrized,
        })
    }

    /// Graph with the given structure and features but no targets, used by pooling.
    pub(crate) fn from_parts(
        num_nodes: usize,
        arcs: Vec<(usize, usize)>,
        node_features: Array2<f64>,
        arc_features: Array2<f64>,
        symmetrized: bool,
    ) -> Graph {
        Graph {
            num_nodes,
            arcs,
            node_features,
            arc_features,
            node_targets: None,
            graph_target: None,
            symmetrized,
        }
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        bail!(Usage, "permutation of length {} for {n} nodes", perm.len());
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            bail!(Usage, "not a permutation of 0..{n}");
        }
    }
    Ok(())
}

/// Whether a neighborhood includes the node itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodMode {
    Open,
    Closed,
}

/// CSR-style incoming-neighbor lists.
///
/// Entry `k` of node `v`'s list lives at position `offsets[v] + k` and records the
/// neighbor id and the arc id it came through (`None` for an added self entry).
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodIndex {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    targets: Vec<usize>,
    arc_ids: Vec<Option<usize>>,
    mode: NeighborhoodMode,
}

impl NeighborhoodIndex {
    /// Open in-neighbor index of `graph`, lists ordered by arc id.
    pub fn open(graph: &Graph) -> Self {
        let lists = (0..graph.num_nodes()).map(|_| Vec::new());
        let mut lists: Vec<Vec<(usize, Option<usize>)>> = lists.collect();
        for (i, &(u, v)) in graph.arcs().iter().enumerate() {
            lists[v].push((u, Some(i)));
        }
        Self::from_lists(lists, NeighborhoodMode::Open)
    }

    pub fn new(graph: &Graph, mode: NeighborhoodMode) -> Self {
        Self::open(graph).with_mode(mode)
    }

    pub(crate) fn from_lists(lists: Vec<Vec<(usize, Option<usize>)>>, mode: NeighborhoodMode) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        let mut arc_ids = Vec::new();
        for (v, list) in lists.into_iter().enumerate() {
            for (u, arc) in list {
                sources.push(u);
                targets.push(v);
                arc_ids.push(arc);
            }
            offsets.push(sources.len());
        }
        NeighborhoodIndex {
            offsets,
            sources,
            targets,
            arc_ids,
            mode,
        }
    }

    /// Re-expresses the index in `mode`. Closing appends each node to its own
    /// list unless it is already present; opening drops the added self entries.
    pub fn with_mode(&self, mode: NeighborhoodMode) -> Self {
        if mode == self.mode {
            return self.clone();
        }
        let lists = (0..self.num_nodes())
            .map(|v| {
                let mut list: Vec<_> = self.entries(v).collect();
                match mode {
                    NeighborhoodMode::Closed => {
                        if !list.iter().any(|&(u, _)| u == v) {
                            list.push((v, None));
                        }
                    }
                    NeighborhoodMode::Open => list.retain(|&(_, arc)| arc.is_some()),
                }
                list
            })
            .collect();
        Self::from_lists(lists, mode)
    }

    pub fn mode(&self) -> NeighborhoodMode {
        self.mode
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total number of (neighbor, node) entries.
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.sources[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn entries(&self, v: usize) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        let range = self.offsets[v]..self.offsets[v + 1];
        self.sources[range.clone()]
            .iter()
            .copied()
            .zip(self.arc_ids[range].iter().copied())
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Neighbor id of every entry.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Receiving node of every entry; non-decreasing.
    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn arc_ids(&self) -> &[Option<usize>] {
        &self.arc_ids
    }
}

/// Self-loop-augmented symmetric normalization coefficients.
#[derive(Clone, Debug)]
pub struct GcnNorm {
    /// Closed neighborhood index; self entries stand for the added self-loops.
    pub index: NeighborhoodIndex,
    /// `1 / sqrt((deg(u) + 1)(deg(v) + 1))` per entry of `index`.
    pub coefficients: Vec<f64>,
}

/// Coefficients of `D̃^{-1/2} (A + I) D̃^{-1/2}` for a symmetrized graph.
pub fn gcn_norm(graph: &Graph) -> Result<GcnNorm> {
    if !graph.is_symmetrized() {
        bail!(Usage, "gcn normalization requires a symmetrized graph");
    }
    Ok(gcn_norm_index(&NeighborhoodIndex::open(graph)))
}

/// Normalization computed from an arbitrary open index (e.g. a sampled one),
/// with degrees taken from that index.
pub fn gcn_norm_index(open: &NeighborhoodIndex) -> GcnNorm {
    let open = open.with_mode(NeighborhoodMode::Open);
    let deg = open.degrees();
    let index = open.with_mode(NeighborhoodMode::Closed);
    let coefficients = index
        .sources()
        .iter()
        .zip(index.targets())
        .map(|(&u, &v)| 1.0 / (((deg[u] + 1) * (deg[v] + 1)) as f64).sqrt())
        .collect();
    GcnNorm { index, coefficients }
}

/// Distance marker for unreachable pairs.
pub const UNREACHABLE: usize = usize::MAX;

/// BFS hop distances following arc direction: `d[u][v]` is the length of the
/// shortest directed path `u -> ... -> v`, or [`UNREACHABLE`].
pub fn shortest_path_distances(graph: &Graph) -> Vec<Vec<usize>> {
    let n = graph.num_nodes();
    let mut out_lists = vec![Vec::new(); n];
    for &(u, v) in graph.arcs() {
        out_lists[u].push(v);
    }
    let mut dist = vec![vec![UNREACHABLE; n]; n];
    let mut queue = VecDeque::new();
    for (s, row) in dist.iter_mut().enumerate() {
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &w in &out_lists[u] {
                if row[w] == UNREACHABLE {
                    row[w] = row[u] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
    dist
}

/// Disjoint union of several graphs.
#[derive(Clone, Debug)]
pub struct BatchedGraph {
    pub graph: Graph,
    node_to_graph: Vec<usize>,
    node_counts: Vec<usize>,
    offsets: Vec<usize>,
    graph_targets: Vec<Option<GraphTarget>>,
}

/// Block-diagonal union of `graphs`; node ids of graph `g` are shifted by the
/// total node count of graphs `0..g`.
pub fn make_batch(graphs: &[Graph]) -> Result<BatchedGraph> {
    let Some(first) = graphs.first() else {
        return Ok(BatchedGraph {
            graph: Graph::new(0, Vec::new(), Array2::zeros((0, 0)), None)?,
            node_to_graph: Vec::new(),
            node_counts: Vec::new(),
            offsets: Vec::new(),
            graph_targets: Vec::new(),
        });
    };
    let (d, da) = (first.feature_dim(), first.arc_feature_dim());
    for (i, g) in graphs.iter().enumerate() {
        if g.feature_dim() != d || g.arc_feature_dim() != da {
            bail!(
                Format,
                "graph {i} has feature widths ({}, {}) but graph 0 has ({d}, {da})",
                g.feature_dim(),
                g.arc_feature_dim()
            );
        }
    }
    let total: usize = graphs.iter().map(Graph::num_nodes).sum();
    let total_arcs: usize = graphs.iter().map(Graph::num_arcs).sum();
    let mut arcs = Vec::with_capacity(total_arcs);
    let mut x = Array2::zeros((total, d));
    let mut a = Array2::zeros((total_arcs, da));
    let mut node_to_graph = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(graphs.len());
    let (mut off, mut arc_off) = (0, 0);
    for (gi, g) in graphs.iter().enumerate() {
        offsets.push(off);
        let n = g.num_nodes();
        x.slice_mut(s![off..off + n, ..]).assign(g.node_features());
        a.slice_mut(s![arc_off..arc_off + g.num_arcs(), ..])
            .assign(g.arc_features());
        arcs.extend(g.arcs().iter().map(|&(u, v)| (u + off, v + off)));
        node_to_graph.extend(std::iter::repeat_n(gi, n));
        off += n;
        arc_off += g.num_arcs();
    }
    let node_targets = merge_node_targets(graphs);
    let mut graph = Graph::new(total, arcs, x, Some(a))?.with_node_targets(node_targets)?;
    graph.symmetrized = graphs.iter().all(Graph::is_symmetrized);
    Ok(BatchedGraph {
        graph,
        node_to_graph,
        node_counts: graphs.iter().map(Graph::num_nodes).collect(),
        offsets,
        graph_targets: graphs.iter().map(|g| g.graph_target.clone()).collect(),
    })
}

fn merge_node_targets(graphs: &[Graph]) -> Option<NodeTargets> {
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for g in graphs {
        match g.node_targets()? {
            NodeTargets::Classes(c) => classes.extend_from_slice(c),
            NodeTargets::Values(v) => values.extend_from_slice(v),
        }
    }
    match (classes.is_empty(), values.is_empty()) {
        (_, true) => Some(NodeTargets::Classes(classes)),
        (true, false) => Some(NodeTargets::Values(values)),
        (false, false) => None,
    }
}

impl BatchedGraph {
    pub fn single(graph: Graph) -> Self {
        let n = graph.num_nodes();
        let target = graph.graph_target.clone();
        BatchedGraph {
            graph,
            node_to_graph: vec![0; n],
            node_counts: vec![n],
            offsets: vec![0],
            graph_targets: vec![target],
        }
    }

    /// Batch over an already-merged graph with an explicit node-to-graph map.
    pub fn from_assignment(graph: Graph, node_to_graph: Vec<usize>, num_graphs: usize) -> Result<Self> {
        if node_to_graph.len() != graph.num_nodes() {
            bail!(Format, "assignment covers {} of {} nodes", node_to_graph.len(), graph.num_nodes());
        }
        if node_to_graph.windows(2).any(|w| w[0] > w[1]) || node_to_graph.last().is_some_and(|&g| g >= num_graphs) {
            bail!(Usage, "node-to-graph map must be non-decreasing and below {num_graphs}");
        }
        let mut node_counts = vec![0; num_graphs];
        for &g in &node_to_graph {
            node_counts[g] += 1;
        }
        if graph.arcs().iter().any(|&(u, v)| node_to_graph[u] != node_to_graph[v]) {
            bail!(Structural, "arc crosses graph boundaries");
        }
        let offsets = node_counts
            .iter()
            .scan(0, |acc, &c| {
                let o = *acc;
                *acc += c;
                Some(o)
            })
            .collect();
        Ok(BatchedGraph {
            graph,
            node_to_graph,
            node_counts,
            offsets,
            graph_targets: vec![None; num_graphs],
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.node_counts.len()
    }

    pub fn node_to_graph(&self) -> &[usize] {
        &self.node_to_graph
    }

    pub fn node_counts(&self) -> &[usize] {
        &self.node_counts
    }

    /// First node id of every graph.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g] + self.node_counts[g]
    }

    pub fn graph_targets(&self) -> &[Option<GraphTarget>] {
        &self.graph_targets
    }

    pub(crate) fn set_graph_targets(&mut self, targets: Vec<Option<GraphTarget>>) {
        self.graph_targets = targets;
    }
}
