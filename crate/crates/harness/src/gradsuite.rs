//! Finite-difference gradient checks over every layer, pooling operator,
//! readout and loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dgn_core::edge_attention::{
    AttentionConfig, EccLayer, EdgeConditionedConfig, GatLayer, HeadMerge, RelationalConfig, RgcnLayer,
};
use dgn_core::graph::make_batch;
use dgn_core::layers::{recurrent_iterate, GraphInput, LayerConfig, MessagePassing, NodeLayer, Variant};
use dgn_core::loss::{
    bce_with_logits, cross_entropy, graph_level_nll, kl_gaussian, link_reconstruction_loss, mse,
    node_level_decoder_nll, pair_logits, GaussianParams, GraphDecoder,
};
use dgn_core::nn::Activation;
use dgn_core::pooling::{self, CoarseAdjacency, DenseConv, EdgePool};
use dgn_core::readout::{Readout, ReadoutConfig, ReadoutMode};
use dgn_core::tensor::{grad_check, GradCheckReport, SegmentMode};
use dgn_core::{Bound, Graph, Matrix, ParamStore, Var};

use crate::error::Result;

/// Maximum relative error a check may report.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradEntry {
    pub name: String,
    pub report: GradCheckReport,
}

impl GradEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < GRAD_TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Fixed weights for reducing `v` to a scalar; depends only on the shape.
fn projection(rows: usize, cols: usize) -> Matrix {
    uniform(&mut ChaCha8Rng::seed_from_u64((rows * 1009 + cols) as u64), rows, cols)
}

fn reduce<'t>(v: Var<'t>) -> dgn_core::Result<Var<'t>> {
    let (r, c) = v.shape();
    Ok(v.mul(v.tape().constant(projection(r, c)))?.sum())
}

/// Random symmetrized graph on 3..=8 nodes. Arc feature column 0 is a
/// relation id in {0, 1}; column 1 is continuous.
fn random_graph(rng: &mut ChaCha8Rng, dim: usize) -> Result<Graph> {
    let n = rng.random_range(3..=8);
    let mut arcs = Vec::new();
    let mut feats = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(0.4) {
                arcs.push((u, v));
                feats.push([f64::from(rng.random_range(0..2u8)), rng.random_range(-1.0..1.0)]);
            }
        }
    }
    if arcs.is_empty() {
        arcs.push((0, 1));
        feats.push([0.0, 0.5]);
    }
    let arc_features = Matrix::from_shape_fn((arcs.len(), 2), |(i, j)| feats[i][j]);
    Ok(Graph::new(n, arcs, uniform(rng, n, dim), Some(arc_features))?.symmetrize())
}

struct Suite {
    rng: ChaCha8Rng,
    entries: Vec<GradEntry>,
}

impl Suite {
    /// Checks `f` with respect to every store parameter followed by `inputs`.
    fn check<F>(&mut self, name: &str, store: &ParamStore, inputs: Vec<Matrix>, f: F) -> Result<()>
    where
        F: for<'t> Fn(&Bound<'t>, &[Var<'t>]) -> dgn_core::Result<Var<'t>>,
    {
        let np = store.len();
        let mut values: Vec<Matrix> = store.iter().map(|(_, _, v)| v.clone()).collect();
        values.extend(inputs);
        let report = grad_check(
            |_, vars| {
                let p = Bound::from_vars(vars[..np].to_vec());
                f(&p, &vars[np..])
            },
            &values,
            FD_STEP,
        )?;
        self.entries.push(GradEntry {
            name: name.to_string(),
            report,
        });
        Ok(())
    }

    fn layer(&mut self, name: &str, graph: &Graph, store: &ParamStore, layer: &dyn NodeLayer) -> Result<()> {
        let h = uniform(&mut self.rng, graph.num_nodes(), layer.in_dim());
        self.check(name, store, vec![h], |p, x| reduce(layer.forward(p, &GraphInput::new(graph), x[0])?))
    }
}

/// Runs every check on graphs drawn from `seed`.
pub fn run_grad_suite(seed: u64) -> Result<Vec<GradEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let graph = random_graph(&mut rng, d)?;
    let second = random_graph(&mut rng, d)?;
    let mut s = Suite { rng, entries: Vec::new() };
    let tanh = Activation::Tanh;

    for (name, agg, mode) in [
        ("generic_sum", SegmentMode::Sum, dgn_core::NeighborhoodMode::Open),
        ("generic_mean", SegmentMode::Mean, dgn_core::NeighborhoodMode::Closed),
        ("generic_max", SegmentMode::Max, dgn_core::NeighborhoodMode::Open),
    ] {
        let mut store = ParamStore::new();
        let cfg = LayerConfig::new(Variant::Generic, d, 4).activation(tanh).aggregator(agg).neighborhood(mode);
        let layer = MessagePassing::new(cfg, &mut store, name, &mut s.rng)?;
        s.layer(name, &graph, &store, &layer)?;
    }
    for (name, variant) in [("gcn", Variant::Gcn), ("gin", Variant::Gin), ("sage_mean", Variant::SageMean)] {
        let mut store = ParamStore::new();
        let mut cfg = LayerConfig::new(variant, d, 4).activation(tanh);
        cfg.gin_epsilon = 0.3;
        cfg.learn_epsilon = true;
        let layer = MessagePassing::new(cfg, &mut store, name, &mut s.rng)?;
        s.layer(name, &graph, &store, &layer)?;
    }
    {
        let mut store = ParamStore::new();
        let cfg = LayerConfig::new(Variant::Generic, d, d).activation(tanh).aggregator(SegmentMode::Mean);
        let layer = MessagePassing::new(cfg, &mut store, "recurrent", &mut s.rng)?;
        let h = uniform(&mut s.rng, graph.num_nodes(), d);
        s.check("recurrent_generic", &store, vec![h], |p, x| {
            reduce(recurrent_iterate(&layer, p, &GraphInput::new(&graph), x[0], 4, 0.0)?.states)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let cfg = RelationalConfig {
            in_dim: d,
            out_dim: 4,
            num_relations: 2,
            relation_column: 0,
            activation: tanh,
        };
        let layer = RgcnLayer::new(cfg, &mut store, "rgcn", &mut s.rng)?;
        s.layer("rgcn", &graph, &store, &layer)?;
    }
    {
        let mut store = ParamStore::new();
        let cfg = EdgeConditionedConfig {
            in_dim: d,
            out_dim: 2,
            arc_dim: 2,
            edge_hidden: vec![4],
            activation: tanh,
        };
        let layer = EccLayer::new(cfg, &mut store, "ecc", &mut s.rng)?;
        s.layer("ecc", &graph, &store, &layer)?;
    }
    for (name, merge) in [("gat_concat", HeadMerge::Concat), ("gat_average", HeadMerge::Average)] {
        let mut store = ParamStore::new();
        let mut cfg = AttentionConfig::new(d, 3, 2);
        cfg.merge = merge;
        cfg.activation = tanh;
        let layer = GatLayer::new(cfg, &mut store, name, &mut s.rng)?;
        s.layer(name, &graph, &store, &layer)?;
    }

    // Pooling operators, on a two-graph batch where they are batch-aware.
    let batch = make_batch(&[graph.clone(), second.clone()])?;
    let n_batch = batch.graph.num_nodes();
    {
        let mut store = ParamStore::new();
        let inner = DenseConv::new(&mut store, "assign", d, 3, &mut s.rng)?;
        let a = graph.dense_adjacency();
        let h = uniform(&mut s.rng, graph.num_nodes(), d);
        s.check("diffpool", &store, vec![h], |p, x| {
            let adjacency = x[0].tape().constant(a.clone());
            let out = pooling::diffpool(&inner, p, adjacency, x[0])?;
            let mut total = reduce(out.features)?;
            if let CoarseAdjacency::Dense(a2) = out.adjacency {
                total = total.add(reduce(a2)?)?;
            }
            for (_, aux) in out.aux_losses {
                total = total.add(aux)?;
            }
            Ok(total)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let proj = store.add("projection", uniform(&mut s.rng, d, 1))?;
        let h = uniform(&mut s.rng, n_batch, d);
        s.check("topk", &store, vec![h], |p, x| {
            reduce(pooling::topk_pool(x[0], &batch, p.var(proj), 0.5)?.features)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let scorer = MessagePassing::new(LayerConfig::new(Variant::Gcn, d, 1), &mut store, "scorer", &mut s.rng)?;
        let h = uniform(&mut s.rng, n_batch, d);
        s.check("sagpool", &store, vec![h], |p, x| {
            reduce(pooling::sagpool(&scorer, p, &batch, x[0], 0.5)?.features)
        })?;
    }
    {
        let mut store = ParamStore::new();
        let pool = EdgePool::new(&mut store, "edgepool", d, &mut s.rng)?;
        let h = uniform(&mut s.rng, n_batch, d);
        s.check("edgepool", &store, vec![h], |p, x| reduce(pool.forward(p, &batch, x[0])?.features))?;
    }
    {
        let probs = uniform(&mut s.rng, 4, 3).mapv(|v| v.abs() + 0.1);
        s.check("entropy_loss", &ParamStore::new(), vec![probs], |_, x| pooling::entropy_loss(x[0]))?;
    }

    // Readouts.
    let ids = batch.node_to_graph().to_vec();
    for (name, mode) in [
        ("readout_sum", ReadoutMode::Sum),
        ("readout_mean", ReadoutMode::Mean),
        ("readout_max", ReadoutMode::Max),
        ("readout_deepsets", ReadoutMode::Deepsets),
    ] {
        let mut store = ParamStore::new();
        let cfg = if mode == ReadoutMode::Deepsets {
            ReadoutConfig::deepsets(vec![d, 4], vec![4, 2])
        } else {
            ReadoutConfig::new(mode)
        };
        let readout = Readout::new(&cfg, &mut store, name, &mut s.rng)?;
        let h = uniform(&mut s.rng, n_batch, d);
        s.check(name, &store, vec![h], |p, x| reduce(readout.forward(p, x[0], &ids, 2)?))?;
    }

    // Losses.
    let n = graph.num_nodes();
    let logits = uniform(&mut s.rng, 5, 3);
    s.check("cross_entropy", &ParamStore::new(), vec![logits], |_, x| cross_entropy(x[0], &[0, 2, 1, 1, 0]))?;
    let (a, b) = (uniform(&mut s.rng, 4, 2), uniform(&mut s.rng, 4, 2));
    s.check("mse", &ParamStore::new(), vec![a, b], |_, x| mse(x[0], x[1]))?;
    let h = uniform(&mut s.rng, n, 2);
    s.check("link_reconstruction", &ParamStore::new(), vec![h.clone()], |_, x| link_reconstruction_loss(&graph, x[0]))?;
    let pairs = [(0, 1), (1, 2), (0, 2)];
    let labels = Matrix::from_shape_vec((3, 1), vec![1.0, 0.0, 1.0]).expect("3 labels");
    s.check("pair_bce", &ParamStore::new(), vec![h.clone()], |_, x| {
        bce_with_logits(pair_logits(x[0], &pairs)?, &labels)
    })?;
    s.check("node_decoder_nll", &ParamStore::new(), vec![h], |_, x| node_level_decoder_nll(x[0], &graph))?;
    {
        let mut store = ParamStore::new();
        let decoder = GraphDecoder::new(&mut store, "decoder", 2, &[4], 8, &mut s.rng)?;
        let z = uniform(&mut s.rng, 1, 2);
        s.check("graph_decoder_nll", &store, vec![z], |p, x| graph_level_nll(decoder.logits(p, x[0])?, &graph))?;
    }
    let (mu, ls) = (uniform(&mut s.rng, 3, 2), uniform(&mut s.rng, 3, 2).mapv(|v| 0.5 * v));
    let noise = uniform(&mut s.rng, 3, 2);
    s.check("gaussian_kl_and_sample", &ParamStore::new(), vec![mu, ls], |_, x| {
        let g = GaussianParams::new(x[0], x[1])?;
        kl_gaussian(&g)?.add(reduce(g.sample(noise.clone())?)?)
    })?;
    Ok(s.entries)
}
