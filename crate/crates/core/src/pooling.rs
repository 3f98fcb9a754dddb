//! Adaptive graph coarsening.
//!
//! Top-k, SAGPool and EdgePool operate on a [`BatchedGraph`] and never mix
//! nodes of different member graphs; DiffPool works on one dense adjacency.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{BatchedGraph, Graph};
use crate::layers::{GraphInput, NodeLayer};
use crate::nn::Linear;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat_cols, concat_rows, Var};

/// Coarsened connectivity.
#[allow(clippy::large_enum_variant)]
pub enum CoarseAdjacency<'t> {
    /// `A' = Sᵀ A S`.
    Dense(Var<'t>),
    /// Arc list of the pooled graph(s).
    Sparse(BatchedGraph),
}

/// How input nodes map to pooled nodes.
pub enum Assignment<'t> {
    /// Soft cluster membership `S: [n × C]`, rows summing to one.
    Soft(Var<'t>),
    /// Ids of the kept nodes, strictly increasing.
    Kept(Vec<usize>),
    /// Pooled node of every input node, and the contracted arc ids.
    Merged { clusters: Vec<usize>, contracted: Vec<usize> },
}

pub struct PoolOutput<'t> {
    pub features: Var<'t>,
    pub adjacency: CoarseAdjacency<'t>,
    pub assignment: Assignment<'t>,
    pub aux_losses: Vec<(String, Var<'t>)>,
}

impl<'t> PoolOutput<'t> {
    pub fn pooled_graph(&self) -> Option<&BatchedGraph> {
        match &self.adjacency {
            CoarseAdjacency::Sparse(b) => Some(b),
            CoarseAdjacency::Dense(_) => None,
        }
    }
}

/// Mean row entropy (natural log) of a soft assignment matrix.
pub fn entropy_loss<'t>(s: Var<'t>) -> Result<Var<'t>> {
    if s.value().iter().any(|&x| x < 0.0) {
        bail!(Usage, "assignment matrix has negative entries");
    }
    let rows = s.rows().max(1) as f64;
    Ok(s.neg_xlogx().sum().scale(1.0 / rows))
}

/// Dense GNN used to produce DiffPool assignment logits:
/// `Z = Aᵀ H W_nbr + H W_self + b`, one column per cluster.
#[derive(Clone, Debug)]
pub struct DenseConv {
    pub neighbor: Linear,
    pub root: Linear,
}

impl DenseConv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(DenseConv {
            neighbor: Linear::new(store, &format!("{name}.neighbor"), in_dim, out_dim, false, rng)?,
            root: Linear::new(store, &format!("{name}.root"), in_dim, out_dim, true, rng)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.root.out_dim()
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.neighbor.params().into_iter().chain(self.root.params()).collect()
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, adjacency: Var<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let agg = adjacency.transpose().matmul(h)?;
        self.neighbor.forward(p, agg)?.add(self.root.forward(p, h)?)
    }
}

/// Soft clustering: `S = softmax_rows(inner(A, H))`, `H' = SᵀH`, `A' = SᵀAS`,
/// with the entropy of `S` attached as `"entropy"`.
pub fn diffpool<'t>(inner: &DenseConv, p: &Bound<'t>, adjacency: Var<'t>, h: Var<'t>) -> Result<PoolOutput<'t>> {
    if inner.out_dim() == 0 {
        bail!(Usage, "diffpool needs at least one cluster");
    }
    let logits = inner.forward(p, adjacency, h)?;
    diffpool_from_logits(logits, adjacency, h)
}

/// DiffPool coarsening from precomputed assignment logits.
pub fn diffpool_from_logits<'t>(logits: Var<'t>, adjacency: Var<'t>, h: Var<'t>) -> Result<PoolOutput<'t>> {
    let n = h.rows();
    if logits.rows() != n || adjacency.shape() != (n, n) {
        bail!(
            Shape,
            "diffpool: logits {:?}, adjacency {:?} for {n} nodes",
            logits.shape(),
            adjacency.shape()
        );
    }
    let s = logits.softmax_rows();
    let st = s.transpose();
    let features = st.matmul(h)?;
    let coarse = st.matmul(adjacency)?.matmul(s)?;
    let entropy = entropy_loss(s)?;
    Ok(PoolOutput {
        features,
        adjacency: CoarseAdjacency::Dense(coarse),
        assignment: Assignment::Soft(s),
        aux_losses: vec![("entropy".to_string(), entropy)],
    })
}

/// `⌈ratio · n⌉`, robust to rounding in the product.
pub fn kept_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
    k.clamp(n.min(1), n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        bail!(Usage, "pooling ratio must be in (0, 1], got {ratio}");
    }
    Ok(())
}

/// Per member graph, the `⌈ratio · n_g⌉` highest scores (ties to the lower id),
/// returned as one strictly increasing id list.
pub fn select_top_k(scores: &[f64], batch: &BatchedGraph, ratio: f64) -> Result<Vec<usize>> {
    check_ratio(ratio)?;
    if scores.len() != batch.graph.num_nodes() {
        bail!(Shape, "{} scores for {} nodes", scores.len(), batch.graph.num_nodes());
    }
    if scores.iter().any(|s| s.is_nan()) {
        bail!(Numeric, "NaN pooling score");
    }
    let mut kept = Vec::new();
    for g in 0..batch.num_graphs() {
        let range = batch.node_range(g);
        let k = kept_count(range.len(), ratio);
        let mut ids: Vec<usize> = range.collect();
        ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut top = ids[..k].to_vec();
        top.sort_unstable();
        kept.extend(top);
    }
    Ok(kept)
}

fn pooled_batch(batch: &BatchedGraph, kept: &[usize], features: &Var<'_>) -> Result<BatchedGraph> {
    let graph = batch
        .graph
        .induced_subgraph(kept)?
        .with_node_features(features.to_matrix())?;
    let map = kept.iter().map(|&v| batch.node_to_graph()[v]).collect();
    let mut pooled = BatchedGraph::from_assignment(graph, map, batch.num_graphs())?;
    pooled.set_graph_targets(batch.graph_targets().to_vec());
    Ok(pooled)
}

fn gated_selection<'t>(h: Var<'t>, gate: Var<'t>, batch: &BatchedGraph, kept: Vec<usize>) -> Result<PoolOutput<'t>> {
    let features = h.gather_rows(&kept)?.mul(gate.gather_rows(&kept)?)?;
    let pooled = pooled_batch(batch, &kept, &features)?;
    Ok(PoolOutput {
        features,
        adjacency: CoarseAdjacency::Sparse(pooled),
        assignment: Assignment::Kept(kept),
        aux_losses: Vec::new(),
    })
}

/// Projection scores `s = H p / ‖p‖`.
pub fn projection_scores<'t>(h: Var<'t>, projection: Var<'t>) -> Result<Var<'t>> {
    if projection.shape() != (h.cols(), 1) {
        bail!(Shape, "projection {:?} for states of width {}", projection.shape(), h.cols());
    }
    let norm = projection.square().sum().sqrt();
    if norm.item() == 0.0 {
        bail!(Numeric, "projection vector is zero");
    }
    h.matmul(projection)?.div(norm)
}

/// Top-k pooling: keep the best-scoring nodes and gate them by `tanh(s)`.
pub fn topk_pool<'t>(h: Var<'t>, batch: &BatchedGraph, projection: Var<'t>, ratio: f64) -> Result<PoolOutput<'t>> {
    check_ratio(ratio)?;
    let scores = projection_scores(h, projection)?;
    let values: Vec<f64> = scores.value().iter().copied().collect();
    let kept = select_top_k(&values, batch, ratio)?;
    gated_selection(h, scores.tanh(), batch, kept)
}

/// Self-attention pooling: scores `s = tanh(GCN(A, H))` from a one-column
/// inner layer; selection as Top-k, gated by `s`.
pub fn sagpool<'t>(
    inner: &dyn NodeLayer,
    p: &Bound<'t>,
    batch: &BatchedGraph,
    h: Var<'t>,
    ratio: f64,
) -> Result<PoolOutput<'t>> {
    check_ratio(ratio)?;
    if inner.out_dim() != 1 {
        bail!(Usage, "sagpool scoring layer must output one column, got {}", inner.out_dim());
    }
    let scores = inner.forward(p, &GraphInput::new(&batch.graph), h)?.tanh();
    let values: Vec<f64> = scores.value().iter().copied().collect();
    let kept = select_top_k(&values, batch, ratio)?;
    gated_selection(h, scores, batch, kept)
}

/// Arc scorer `σ(wᵀ[h_src, h_dst] + b)`.
#[derive(Clone, Debug)]
pub struct EdgePool {
    pub scorer: Linear,
}

impl EdgePool {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(EdgePool {
            scorer: Linear::new(store, &format!("{name}.scorer"), 2 * in_dim, 1, true, rng)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.scorer.params()
    }

    /// Score of every arc, `E × 1`.
    pub fn arc_scores<'t>(&self, p: &Bound<'t>, graph: &Graph, h: Var<'t>) -> Result<Var<'t>> {
        let (src, dst): (Vec<usize>, Vec<usize>) = graph.arcs().iter().copied().unzip();
        let pairs = concat_cols(&[h.gather_rows(&src)?, h.gather_rows(&dst)?])?;
        Ok(self.scorer.forward(p, pairs)?.sigmoid())
    }

    /// Contracts a greedy maximal matching taken in descending score order
    /// (ties to the lower arc id). A merged node gets `score · (h_u + h_v)`;
    /// unmatched nodes pass through unchanged.
    pub fn forward<'t>(&self, p: &Bound<'t>, batch: &BatchedGraph, h: Var<'t>) -> Result<PoolOutput<'t>> {
        let graph = &batch.graph;
        if !graph.is_symmetrized() {
            bail!(Usage, "edge pooling requires a symmetrized graph");
        }
        let n = graph.num_nodes();
        if h.rows() != n {
            bail!(Shape, "{} state rows for {n} nodes", h.rows());
        }
        let num_arcs = graph.num_arcs();
        let scores = if num_arcs > 0 {
            self.arc_scores(p, graph, h)?
        } else {
            h.tape().zeros(0, 1)
        };
        let score_values: Vec<f64> = scores.value().iter().copied().collect();
        if score_values.iter().any(|s| s.is_nan()) {
            bail!(Numeric, "NaN edge score");
        }
        let mut order: Vec<usize> = (0..num_arcs).collect();
        order.sort_by(|&a, &b| score_values[b].total_cmp(&score_values[a]).then(a.cmp(&b)));

        let mut partner_arc = vec![None; n];
        let mut contracted = Vec::new();
        for e in order {
            let (u, v) = graph.arcs()[e];
            if u != v && partner_arc[u].is_none() && partner_arc[v].is_none() {
                partner_arc[u] = Some(e);
                partner_arc[v] = Some(e);
                contracted.push(e);
            }
        }

        // Pooled ids follow the smallest member id, keeping member graphs contiguous.
        let mut clusters = vec![usize::MAX; n];
        let mut next = 0;
        for v in 0..n {
            if clusters[v] != usize::MAX {
                continue;
            }
            clusters[v] = next;
            if let Some(e) = partner_arc[v] {
                let (a, b) = graph.arcs()[e];
                clusters[if a == v { b } else { a }] = next;
            }
            next += 1;
        }

        let gate_rows: Vec<usize> = partner_arc.iter().map(|e| e.unwrap_or(num_arcs)).collect();
        let gate = concat_rows(&[scores, h.tape().constant(Array2::ones((1, 1)))])?.gather_rows(&gate_rows)?;
        let features = h.mul(gate)?.segment_sum(&clusters, next)?;

        let mut seen = HashSet::new();
        let arcs: Vec<(usize, usize)> = graph
            .arcs()
            .iter()
            .map(|&(u, v)| (clusters[u], clusters[v]))
            .filter(|&(a, b)| a != b && seen.insert((a, b)))
            .collect();
        let num_arcs = arcs.len();
        let pooled_graph = Graph::from_parts(next, arcs, features.to_matrix(), Array2::zeros((num_arcs, 0)), true);
        let mut node_to_graph = vec![0; next];
        for v in 0..n {
            node_to_graph[clusters[v]] = batch.node_to_graph()[v];
        }
        let mut pooled = BatchedGraph::from_assignment(pooled_graph, node_to_graph, batch.num_graphs())?;
        pooled.set_graph_targets(batch.graph_targets().to_vec());
        Ok(PoolOutput {
            features,
            adjacency: CoarseAdjacency::Sparse(pooled),
            assignment: Assignment::Merged { clusters, contracted },
            aux_losses: Vec::new(),
        })
    }
}

/// Pooling operator kinds, for configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Diffpool,
    Topk,
    Sagpool,
    Edgepool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{LayerConfig, LayerParams, MessagePassing, Variant};
    use crate::tensor::Tape;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn undirected(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::featureless(n, edges.to_vec()).unwrap().symmetrize()
    }

    #[test]
    fn entropy_endpoints() {
        let tape = Tape::new();
        let one_hot = tape.constant(array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]);
        assert_eq!(entropy_loss(one_hot).unwrap().item(), 0.0);
        let uniform = tape.constant(Array2::from_elem((3, 4), 0.25));
        assert!((entropy_loss(uniform).unwrap().item() - 4f64.ln()).abs() < 1e-12);
        let half = tape.constant(array![[0.5, 0.5, 0.0, 0.0]]);
        assert!((entropy_loss(half).unwrap().item() - 2f64.ln()).abs() < 1e-12);
        assert!(entropy_loss(tape.constant(array![[-0.1, 1.1]])).is_err());
    }

    #[test]
    fn diffpool_identity_assignment() {
        let tape = Tape::new();
        let a = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]];
        let h = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let logits = tape.constant(Array2::eye(3) * 100.0);
        let out = diffpool_from_logits(logits, tape.constant(a.clone()), tape.constant(h.clone())).unwrap();
        assert!(out.features.value().iter().zip(h.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
        let CoarseAdjacency::Dense(ac) = out.adjacency else { panic!() };
        assert!(ac.value().iter().zip(a.iter()).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn diffpool_single_cluster_sums_everything() {
        let mut store = ParamStore::new();
        let inner = DenseConv::new(&mut store, "d", 2, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = undirected(3, &[(0, 1), (1, 2)]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let out = diffpool(&inner, &p, tape.constant(g.dense_adjacency()), tape.constant(h)).unwrap();
        assert_eq!(*out.features.value(), array![[9.0, 12.0]]);
        let CoarseAdjacency::Dense(ac) = out.adjacency else { panic!() };
        assert_eq!(ac.item(), 4.0);
        assert_eq!(out.aux_losses[0].1.item(), 0.0);
    }

    fn single(g: &Graph) -> BatchedGraph {
        BatchedGraph::single(g.clone())
    }

    #[test]
    fn topk_keeps_best_scores() {
        let g = undirected(4, &[(0, 1), (1, 2), (2, 3)]);
        let tape = Tape::new();
        let h = tape.constant(array![[3.0], [1.0], [2.0], [0.0]]);
        let p = tape.constant(array![[1.0]]);
        let out = topk_pool(h, &single(&g), p, 0.5).unwrap();
        let Assignment::Kept(kept) = &out.assignment else { panic!() };
        assert_eq!(kept, &vec![0, 2]);
        let expected = array![[3.0 * 3f64.tanh()], [2.0 * 2f64.tanh()]];
        assert_eq!(*out.features.value(), expected);
        let pooled = out.pooled_graph().unwrap();
        assert_eq!(pooled.graph.num_arcs(), 0);
    }

    #[test]
    fn topk_full_ratio_only_gates() {
        let g = undirected(3, &[(0, 1), (1, 2)]);
        let tape = Tape::new();
        let hm = array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.9]];
        let h = tape.constant(hm.clone());
        let p = tape.constant(array![[0.6], [0.8]]);
        let out = topk_pool(h, &single(&g), p, 1.0).unwrap();
        let s = hm.dot(&array![[0.6], [0.8]]);
        let expected = &hm * &s.mapv(f64::tanh);
        assert_eq!(*out.features.value(), expected);
        assert_eq!(out.pooled_graph().unwrap().graph.arcs(), g.arcs());
    }

    #[test]
    fn topk_rejects_bad_inputs() {
        let g = undirected(2, &[(0, 1)]);
        let tape = Tape::new();
        let h = tape.constant(array![[1.0], [2.0]]);
        assert!(matches!(
            topk_pool(h, &single(&g), tape.constant(array![[0.0]]), 0.5),
            Err(crate::Error::Numeric(_))
        ));
        assert!(topk_pool(h, &single(&g), tape.constant(array![[1.0]]), 0.0).is_err());
        assert!(topk_pool(h, &single(&g), tape.constant(array![[1.0]]), 1.5).is_err());
    }

    #[test]
    fn kept_count_rounding() {
        assert_eq!(kept_count(10, 0.7), 7);
        assert_eq!(kept_count(5, 0.5), 3);
        assert_eq!(kept_count(3, 0.01), 1);
        assert_eq!(kept_count(0, 0.5), 0);
        assert_eq!(kept_count(4, 1.0), 4);
    }

    #[test]
    fn sagpool_zero_scorer_takes_first_ids() {
        let mut store = ParamStore::new();
        let inner = MessagePassing::new(LayerConfig::new(Variant::Gcn, 2, 1), &mut store, "s", &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let LayerParams::Gcn { weight } = &inner.params else { unreachable!() };
        store.get_mut(weight.weight).fill(0.0);
        let g = undirected(5, &[(0, 1), (1, 2), (3, 4)]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.constant(Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64));
        let out = sagpool(&inner, &p, &single(&g), h, 0.5).unwrap();
        let Assignment::Kept(kept) = &out.assignment else { panic!() };
        assert_eq!(kept, &vec![0, 1, 2]);
    }

    #[test]
    fn edgepool_single_edge() {
        let mut store = ParamStore::new();
        let pool = EdgePool::new(&mut store, "e", 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = undirected(2, &[(0, 1)]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let hm = array![[0.5, 1.0], [-0.25, 2.0]];
        let h = tape.constant(hm.clone());
        let scores = pool.arc_scores(&p, &g, h).unwrap().value();
        let best = scores[[0, 0]].max(scores[[1, 0]]);
        let out = pool.forward(&p, &single(&g), h).unwrap();
        assert_eq!(out.features.shape(), (1, 2));
        let expected = (&hm.row(0) + &hm.row(1)) * best;
        assert_eq!(out.features.value().row(0), expected);
        assert_eq!(out.pooled_graph().unwrap().graph.num_arcs(), 0);
    }

    #[test]
    fn edgepool_without_arcs_is_identity() {
        let mut store = ParamStore::new();
        let pool = EdgePool::new(&mut store, "e", 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = undirected(3, &[]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.constant(array![[1.0], [2.0], [3.0]]);
        let out = pool.forward(&p, &single(&g), h).unwrap();
        assert_eq!(*out.features.value(), array![[1.0], [2.0], [3.0]]);
    }

    #[test]
    fn edgepool_triangle_contracts_once() {
        let mut store = ParamStore::new();
        let pool = EdgePool::new(&mut store, "e", 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = undirected(3, &[(0, 1), (1, 2), (2, 0)]);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = pool.forward(&p, &single(&g), tape.constant(array![[0.1], [0.7], [-0.4]])).unwrap();
        let Assignment::Merged { contracted, .. } = &out.assignment else { panic!() };
        assert_eq!(contracted.len(), 1);
        let pooled = out.pooled_graph().unwrap();
        assert_eq!(pooled.graph.num_nodes(), 2);
        assert_eq!(pooled.graph.num_arcs(), 2);
    }

    #[test]
    fn edgepool_requires_symmetrized() {
        let mut store = ParamStore::new();
        let pool = EdgePool::new(&mut store, "e", 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let g = Graph::featureless(2, vec![(0, 1)]).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert!(pool.forward(&p, &single(&g), tape.constant(array![[1.0], [1.0]])).is_err());
    }
}
