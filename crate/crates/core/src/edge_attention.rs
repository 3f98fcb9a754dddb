//! Arc-conditioned aggregation (discrete relations and continuous arc
//! features), graph attention, and neighbor sampling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{Graph, NeighborhoodIndex, NeighborhoodMode};
use crate::layers::{check_states, column, GraphInput, NodeLayer};
use crate::nn::{Activation, Linear, Mlp};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat_cols, concat_rows, Var};

/// Relational aggregation with one weight matrix per discrete arc label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationalConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub num_relations: usize,
    /// Arc feature column holding the integer relation id.
    #[serde(default)]
    pub relation_column: usize,
    #[serde(default)]
    pub activation: Activation,
}

/// `h_v' = act(Σ_k Σ_{u ∈ N_v^k} W_k h_u / |N_v^k| + W_self h_v)`.
#[derive(Clone, Debug)]
pub struct RgcnLayer {
    pub config: RelationalConfig,
    pub relation_weights: Vec<Linear>,
    pub self_weight: Linear,
}

impl RgcnLayer {
    pub fn new<R: Rng + ?Sized>(config: RelationalConfig, store: &mut ParamStore, name: &str, rng: &mut R) -> Result<Self> {
        if config.in_dim == 0 || config.out_dim == 0 || config.num_relations == 0 {
            bail!(Usage, "relational layer needs positive dims and at least one relation");
        }
        let relation_weights = (0..config.num_relations)
            .map(|k| Linear::new(store, &format!("{name}.relation{k}"), config.in_dim, config.out_dim, false, rng))
            .collect::<Result<_>>()?;
        let self_weight = Linear::new(store, &format!("{name}.self"), config.in_dim, config.out_dim, false, rng)?;
        Ok(RgcnLayer {
            config,
            relation_weights,
            self_weight,
        })
    }

    /// Relation id of every arc of `graph`.
    pub fn relations(&self, graph: &Graph) -> Result<Vec<usize>> {
        let col = self.config.relation_column;
        if col >= graph.arc_feature_dim() {
            bail!(Usage, "relation column {col} missing from arc features of width {}", graph.arc_feature_dim());
        }
        graph
            .arc_features()
            .column(col)
            .iter()
            .map(|&r| {
                if r < 0.0 || r.fract() != 0.0 || r as usize >= self.config.num_relations {
                    bail!(Structural, "relation id {r} outside [0, {})", self.config.num_relations);
                }
                Ok(r as usize)
            })
            .collect()
    }
}

impl NodeLayer for RgcnLayer {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn params(&self) -> Vec<ParamId> {
        self.relation_weights
            .iter()
            .chain(std::iter::once(&self.self_weight))
            .flat_map(Linear::params)
            .collect()
    }

    fn forward<'t>(&self, p: &Bound<'t>, input: &GraphInput<'_>, h: Var<'t>) -> Result<Var<'t>> {
        check_states(&h, input, self.config.in_dim)?;
        let n = input.num_nodes();
        let k = self.config.num_relations;
        let relations = self.relations(input.graph())?;
        let idx = input.neighborhoods(NeighborhoodMode::Open);
        let entry_rel: Vec<usize> = idx
            .arc_ids()
            .iter()
            .map(|a| relations[a.expect("open entries carry arc ids")])
            .collect();
        let mut group_size = vec![0usize; n * k];
        for (&v, &r) in idx.targets().iter().zip(&entry_rel) {
            group_size[v * k + r] += 1;
        }
        let rows: Vec<usize> = idx.sources().iter().zip(&entry_rel).map(|(&u, &r)| r * n + u).collect();
        let coeffs = idx
            .targets()
            .iter()
            .zip(&entry_rel)
            .map(|(&v, &r)| 1.0 / group_size[v * k + r] as f64)
            .collect();
        let transformed = self
            .relation_weights
            .iter()
            .map(|w| w.forward(p, h))
            .collect::<Result<Vec<_>>>()?;
        let agg = concat_rows(&transformed)?
            .gather_rows(&rows)?
            .mul(column(&h, coeffs))?
            .segment_sum(idx.targets(), n)?;
        let out = agg.add(self.self_weight.forward(p, h)?)?;
        Ok(self.config.activation.apply(out))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeConditionedConfig {
    pub in_dim: usize,
    pub out_dim: usize,
    pub arc_dim: usize,
    /// Hidden widths of the edge network.
    #[serde(default)]
    pub edge_hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// Edge-conditioned convolution: `h_v' = act(Σ_{u ∈ N_v} M(a_uv) h_u / |N_v|)`
/// where the edge network emits `M(a_uv)` as an `out×in` matrix flattened row-major.
#[derive(Clone, Debug)]
pub struct EccLayer {
    pub config: EdgeConditionedConfig,
    pub edge_net: Mlp,
}

impl EccLayer {
    pub fn new<R: Rng + ?Sized>(
        config: EdgeConditionedConfig,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Result<Self> {
        if config.in_dim == 0 || config.out_dim == 0 || config.arc_dim == 0 {
            bail!(Usage, "edge-conditioned layer needs positive dims and arc features");
        }
        let mut dims = vec![config.arc_dim];
        dims.extend(&config.edge_hidden);
        dims.push(config.in_dim * config.out_dim);
        let edge_net = Mlp::new(store, &format!("{name}.edge_net"), &dims, Activation::Relu, Activation::Identity, rng)?;
        Ok(EccLayer { config, edge_net })
    }
}

impl NodeLayer for EccLayer {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn params(&self) -> Vec<ParamId> {
        self.edge_net.params()
    }

    fn forward<'t>(&self, p: &Bound<'t>, input: &GraphInput<'_>, h: Var<'t>) -> Result<Var<'t>> {
        check_states(&h, input, self.config.in_dim)?;
        let graph = input.graph();
        if graph.arc_feature_dim() != self.config.arc_dim {
            bail!(
                Usage,
                "edge-conditioned layer expects arc features of width {}, graph has {}",
                self.config.arc_dim,
                graph.arc_feature_dim()
            );
        }
        let n = input.num_nodes();
        let idx = input.neighborhoods(NeighborhoodMode::Open);
        let arcs: Vec<usize> = idx.arc_ids().iter().map(|a| a.expect("open entries carry arc ids")).collect();
        let arc_features = h.tape().constant(graph.arc_features().clone()).gather_rows(&arcs)?;
        let matrices = self.edge_net.forward(p, arc_features)?;
        let messages = matrices.rowwise_matvec(h.gather_rows(idx.sources())?, self.config.out_dim)?;
        let agg = messages.segment_mean(idx.targets(), n)?;
        Ok(self.config.activation.apply(agg))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    Concat,
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub in_dim: usize,
    pub head_dim: usize,
    #[serde(default = "one")]
    pub num_heads: usize,
    #[serde(default = "concat")]
    pub merge: HeadMerge,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "closed")]
    pub neighborhood: NeighborhoodMode,
}

fn one() -> usize {
    1
}

fn concat() -> HeadMerge {
    HeadMerge::Concat
}

fn default_slope() -> f64 {
    crate::nn::DEFAULT_LEAKY_SLOPE
}

fn closed() -> NeighborhoodMode {
    NeighborhoodMode::Closed
}

impl AttentionConfig {
    pub fn new(in_dim: usize, head_dim: usize, num_heads: usize) -> Self {
        AttentionConfig {
            in_dim,
            head_dim,
            num_heads,
            merge: HeadMerge::Concat,
            activation: Activation::Identity,
            leaky_slope: default_slope(),
            neighborhood: NeighborhoodMode::Closed,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.num_heads * self.head_dim,
            HeadMerge::Average => self.head_dim,
        }
    }
}

/// One attention head: projection `W` and attention vector `b` of length `2·head_dim`.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub weight: ParamId,
    pub attention: ParamId,
}

/// Graph attention: per head, `w_uv = LeakyReLU(bᵀ[W h_u, W h_v])`,
/// `α_uv = softmax over N_v`, `h_v' = act(Σ α_uv W h_u)`.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub config: AttentionConfig,
    pub heads: Vec<AttentionHead>,
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(config: AttentionConfig, store: &mut ParamStore, name: &str, rng: &mut R) -> Result<Self> {
        if config.num_heads == 0 || config.in_dim == 0 || config.head_dim == 0 {
            bail!(Usage, "attention needs at least one head and positive dims");
        }
        let heads = (0..config.num_heads)
            .map(|k| {
                Ok(AttentionHead {
                    weight: store.add_glorot(format!("{name}.head{k}.weight"), config.in_dim, config.head_dim, rng)?,
                    attention: store.add_glorot(format!("{name}.head{k}.attention"), 2 * config.head_dim, 1, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GatLayer { config, heads })
    }

    /// Layer output and, per head, the attention score of every neighborhood entry
    /// (aligned with `input.neighborhoods(config.neighborhood)`).
    pub fn forward_with_attention<'t>(
        &self,
        p: &Bound<'t>,
        input: &GraphInput<'_>,
        h: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        check_states(&h, input, self.config.in_dim)?;
        let n = input.num_nodes();
        let hd = self.config.head_dim;
        let idx = input.neighborhoods(self.config.neighborhood);
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut scores = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let z = h.matmul(p.var(head.weight))?;
            let b = p.var(head.attention);
            let from_src = z.matmul(b.slice_rows(0, hd)?)?.gather_rows(idx.sources())?;
            let from_dst = z.matmul(b.slice_rows(hd, 2 * hd)?)?.gather_rows(idx.targets())?;
            let coefficients = from_src.add(from_dst)?.leaky_relu(self.config.leaky_slope);
            let alpha = coefficients.segment_softmax(idx.targets(), n)?;
            let out = z.gather_rows(idx.sources())?.mul(alpha)?.segment_sum(idx.targets(), n)?;
            outputs.push(self.config.activation.apply(out));
            scores.push(alpha);
        }
        let merged = match self.config.merge {
            HeadMerge::Concat => concat_cols(&outputs)?,
            HeadMerge::Average => {
                let mut acc = outputs[0];
                for o in &outputs[1..] {
                    acc = acc.add(*o)?;
                }
                acc.scale(1.0 / outputs.len() as f64)
            }
        };
        Ok((merged, scores))
    }
}

impl NodeLayer for GatLayer {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim()
    }

    fn params(&self) -> Vec<ParamId> {
        self.heads.iter().flat_map(|h| [h.weight, h.attention]).collect()
    }

    fn forward<'t>(&self, p: &Bound<'t>, input: &GraphInput<'_>, h: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_attention(p, input, h)?.0)
    }
}

/// Open neighborhood index keeping, for every node, a uniformly drawn subset
/// of `min(fanout, |N_v|)` in-neighbors without replacement. Kept entries stay
/// in arc order, so `fanout >= max degree` reproduces the full index.
pub fn sample_neighbors(graph: &Graph, fanout: usize, seed: u64) -> Result<NeighborhoodIndex> {
    if fanout == 0 {
        bail!(Usage, "fanout must be at least 1");
    }
    let full = NeighborhoodIndex::open(graph);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists = (0..graph.num_nodes())
        .map(|v| {
            let entries: Vec<_> = full.entries(v).collect();
            if entries.len() <= fanout {
                return entries;
            }
            let mut picked = index::sample(&mut rng, entries.len(), fanout).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| entries[i]).collect()
        })
        .collect();
    Ok(NeighborhoodIndex::from_lists(lists, NeighborhoodMode::Open))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use ndarray::{array, Array2};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn labeled_path() -> Graph {
        // 0 -> 1 (rel 0), 2 -> 1 (rel 1), 3 -> 1 (rel 1); node 4 isolated
        Graph::new(
            5,
            vec![(0, 1), (2, 1), (3, 1)],
            Array2::from_shape_fn((5, 2), |(i, j)| (i + 2 * j) as f64 * 0.1),
            Some(array![[0.0], [1.0], [1.0]]),
        )
        .unwrap()
    }

    #[test]
    fn rgcn_zeroed_relation_removes_its_arcs() {
        let g = labeled_path();
        let mut store = ParamStore::new();
        let cfg = RelationalConfig {
            in_dim: 2,
            out_dim: 2,
            num_relations: 2,
            relation_column: 0,
            activation: Activation::Identity,
        };
        let layer = RgcnLayer::new(cfg, &mut store, "r", &mut rng()).unwrap();
        store.set(layer.relation_weights[1].weight, Array2::zeros((2, 2))).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = g.node_features().clone();
        let out = layer.forward(&p, &GraphInput::new(&g), tape.constant(x.clone())).unwrap();
        let w0 = store.get(layer.relation_weights[0].weight);
        let ws = store.get(layer.self_weight.weight);
        let expected = x.row(0).dot(w0) + x.row(1).dot(ws);
        assert_eq!(out.value().row(1), expected);
        // Isolated node: self transform only.
        assert_eq!(out.value().row(4), x.row(4).dot(ws));
    }

    #[test]
    fn rgcn_rejects_unknown_relation() {
        let g = labeled_path();
        let mut store = ParamStore::new();
        let cfg = RelationalConfig {
            in_dim: 2,
            out_dim: 2,
            num_relations: 1,
            relation_column: 0,
            activation: Activation::Identity,
        };
        let layer = RgcnLayer::new(cfg, &mut store, "r", &mut rng()).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = tape.constant(g.node_features().clone());
        assert!(layer.forward(&p, &GraphInput::new(&g), h).is_err());
    }

    fn ecc_with_identity(g: &Graph) -> (ParamStore, EccLayer) {
        let mut store = ParamStore::new();
        let cfg = EdgeConditionedConfig {
            in_dim: 2,
            out_dim: 2,
            arc_dim: g.arc_feature_dim(),
            edge_hidden: vec![],
            activation: Activation::Identity,
        };
        let layer = EccLayer::new(cfg, &mut store, "e", &mut rng()).unwrap();
        let lin = &layer.edge_net.layers[0];
        store.get_mut(lin.weight).fill(0.0);
        store.set(lin.bias.unwrap(), array![[1.0, 0.0, 0.0, 1.0]]).unwrap();
        (store, layer)
    }

    #[test]
    fn ecc_identity_edge_net_is_mean_of_neighbors() {
        let g = labeled_path();
        let (store, layer) = ecc_with_identity(&g);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let x = g.node_features().clone();
        let out = layer.forward(&p, &GraphInput::new(&g), tape.constant(x.clone())).unwrap();
        let mean = (&x.row(0) + &x.row(2) + x.row(3)) / 3.0;
        for (a, b) in out.value().row(1).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.value().row(4), array![0.0, 0.0]);
    }

    #[test]
    fn ecc_requires_arc_features() {
        let g = Graph::featureless(2, vec![(0, 1)]).unwrap();
        let mut store = ParamStore::new();
        let cfg = EdgeConditionedConfig {
            in_dim: 1,
            out_dim: 1,
            arc_dim: 1,
            edge_hidden: vec![3],
            activation: Activation::Identity,
        };
        let layer = EccLayer::new(cfg, &mut store, "e", &mut rng()).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert!(layer.forward(&p, &GraphInput::new(&g), tape.constant(Array2::ones((2, 1)))).is_err());
    }

    #[test]
    fn ecc_same_arc_features_same_matrix() {
        let g = labeled_path();
        let mut store = ParamStore::new();
        let cfg = EdgeConditionedConfig {
            in_dim: 2,
            out_dim: 3,
            arc_dim: 1,
            edge_hidden: vec![4],
            activation: Activation::Identity,
        };
        let layer = EccLayer::new(cfg, &mut store, "e", &mut rng()).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let a = tape.constant(g.arc_features().clone());
        let m = layer.edge_net.forward(&p, a).unwrap().value();
        assert_eq!(m.row(1), m.row(2));
        assert_ne!(m.row(0), m.row(1));
    }

    #[test]
    fn gat_singleton_and_uniform_neighborhoods() {
        let g = Graph::featureless(4, vec![(1, 0), (2, 0)]).unwrap().symmetrize();
        let mut store = ParamStore::new();
        let layer = GatLayer::new(AttentionConfig::new(1, 3, 2), &mut store, "g", &mut rng()).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let input = GraphInput::new(&g);
        let (out, scores) = layer.forward_with_attention(&p, &input, tape.constant(Array2::ones((4, 1)))).unwrap();
        assert_eq!(out.shape(), (4, 6));
        let idx = input.neighborhoods(NeighborhoodMode::Closed);
        for alpha in scores {
            let alpha = alpha.value();
            for (e, &v) in idx.targets().iter().enumerate() {
                // identical states: uniform attention, singleton for isolated node 3
                let expected = 1.0 / idx.degree(v) as f64;
                assert!((alpha[[e, 0]] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sampling_keeps_subset_of_neighbors() {
        let g = Graph::featureless(4, vec![(1, 0), (2, 0), (3, 0)]).unwrap();
        let s = sample_neighbors(&g, 1, 9).unwrap();
        assert_eq!(s.degree(0), 1);
        assert!([1, 2, 3].contains(&s.neighbors(0)[0]));
        let full = sample_neighbors(&g, 3, 9).unwrap();
        assert_eq!(full, NeighborhoodIndex::open(&g));
        assert!(sample_neighbors(&g, 0, 9).is_err());
        assert_eq!(sample_neighbors(&g, 2, 4).unwrap(), sample_neighbors(&g, 2, 4).unwrap());
    }
}
