//! Message-passing layers.
//!
//! Every layer computes `h_v' = φ(h_v, Ψ({ψ(h_u) : u ∈ N_v}))` with a
//! permutation-invariant `Ψ` realized by a segmented reduction over the
//! incoming-neighbor index of the graph.

use std::borrow::Cow;
use std::cell::OnceCell;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{gcn_norm_index, GcnNorm, Graph, NeighborhoodIndex, NeighborhoodMode};
use crate::nn::{Activation, Linear, Mlp};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{concat_cols, SegmentMode, Var};

/// A graph together with the neighborhoods layers aggregate over.
///
/// By default the neighborhoods are the full in-neighbor lists; a sampled
/// index can be substituted with [`GraphInput::with_index`].
pub struct GraphInput<'g> {
    graph: &'g Graph,
    open: Cow<'g, NeighborhoodIndex>,
    closed: OnceCell<NeighborhoodIndex>,
    gcn: OnceCell<GcnNorm>,
}

impl<'g> GraphInput<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self::from_cow(graph, Cow::Owned(NeighborhoodIndex::open(graph)))
    }

    /// Uses `index` (any mode; self entries are dropped) in place of the full neighborhoods.
    pub fn with_index(graph: &'g Graph, index: NeighborhoodIndex) -> Result<Self> {
        if index.num_nodes() != graph.num_nodes() {
            bail!(
                Structural,
                "index covers {} nodes, graph has {}",
                index.num_nodes(),
                graph.num_nodes()
            );
        }
        Ok(Self::from_cow(graph, Cow::Owned(index.with_mode(NeighborhoodMode::Open))))
    }

    fn from_cow(graph: &'g Graph, open: Cow<'g, NeighborhoodIndex>) -> Self {
        GraphInput {
            graph,
            open,
            closed: OnceCell::new(),
            gcn: OnceCell::new(),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn neighborhoods(&self, mode: NeighborhoodMode) -> &NeighborhoodIndex {
        match mode {
            NeighborhoodMode::Open => &self.open,
            NeighborhoodMode::Closed => self.closed.get_or_init(|| self.open.with_mode(NeighborhoodMode::Closed)),
        }
    }

    /// GCN coefficients over the current neighborhoods; needs a symmetrized graph.
    pub fn gcn_norm(&self) -> Result<&GcnNorm> {
        if !self.graph.is_symmetrized() {
            bail!(Usage, "gcn normalization requires a symmetrized graph");
        }
        Ok(self.gcn.get_or_init(|| gcn_norm_index(&self.open)))
    }
}

/// A layer mapping node states `[n × in_dim]` to `[n × out_dim]`.
pub trait NodeLayer {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn params(&self) -> Vec<ParamId>;
    fn forward<'t>(&self, p: &Bound<'t>, input: &GraphInput<'_>, h: Var<'t>) -> Result<Var<'t>>;
}

pub(crate) fn check_states(h: &Var<'_>, input: &GraphInput<'_>, in_dim: usize) -> Result<()> {
    if h.shape() != (input.num_nodes(), in_dim) {
        bail!(
            Shape,
            "expected node states of shape ({}, {in_dim}), got {:?}",
            input.num_nodes(),
            h.shape()
        );
    }
    Ok(())
}

/// Constant `n × 1` column.
pub(crate) fn column<'t>(like: &Var<'t>, values: Vec<f64>) -> Var<'t> {
    let n = values.len();
    like.tape()
        .constant(Array2::from_shape_vec((n, 1), values).expect("column length"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Generic,
    Gcn,
    Gin,
    SageMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub variant: Variant,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default = "default_aggregator")]
    pub aggregator: SegmentMode,
    #[serde(default = "default_mode")]
    pub neighborhood: NeighborhoodMode,
    #[serde(default)]
    pub activation: Activation,
    /// Initial ε of GIN.
    #[serde(default)]
    pub gin_epsilon: f64,
    #[serde(default = "default_true")]
    pub learn_epsilon: bool,
    /// Hidden width of the GIN MLP; defaults to `out_dim`.
    #[serde(default)]
    pub gin_hidden: Option<usize>,
}

fn default_aggregator() -> SegmentMode {
    SegmentMode::Sum
}

fn default_mode() -> NeighborhoodMode {
    NeighborhoodMode::Open
}

fn default_true() -> bool {
    true
}

impl LayerConfig {
    pub fn new(variant: Variant, in_dim: usize, out_dim: usize) -> Self {
        LayerConfig {
            variant,
            in_dim,
            out_dim,
            aggregator: default_aggregator(),
            neighborhood: default_mode(),
            activation: Activation::Identity,
            gin_epsilon: 0.0,
            learn_epsilon: true,
            gin_hidden: None,
        }
    }

    pub fn activation(mut self, a: Activation) -> Self {
        self.activation = a;
        self
    }

    pub fn aggregator(mut self, a: SegmentMode) -> Self {
        self.aggregator = a;
        self
    }

    pub fn neighborhood(mut self, m: NeighborhoodMode) -> Self {
        self.neighborhood = m;
        self
    }
}

/// Parameters of a [`MessagePassing`] layer, per variant.
#[derive(Clone, Debug)]
pub enum LayerParams {
    /// `ψ(h) = h W_msg`, `φ = act([h_v, M_v] W_upd + b)`.
    Generic { message: Linear, update: Linear },
    /// `act(Σ_u L̂_vu h_u W)`.
    Gcn { weight: Linear },
    /// `MLP((1 + ε) h_v + Σ_u h_u)`; `epsilon` is `None` when ε is fixed.
    Gin { epsilon: Option<ParamId>, mlp: Mlp },
    /// `act(W · [h_v, Σ_u h_u] / max(|N_v|, 1))`.
    SageMean { weight: Linear },
}

#[derive(Clone, Debug)]
pub struct MessagePassing {
    pub config: LayerConfig,
    pub params: LayerParams,
}

impl MessagePassing {
    pub fn new<R: Rng + ?Sized>(config: LayerConfig, store: &mut ParamStore, name: &str, rng: &mut R) -> Result<Self> {
        let (i, o) = (config.in_dim, config.out_dim);
        if i == 0 || o == 0 {
            bail!(Usage, "layer dims must be positive, got {i} -> {o}");
        }
        let params = match config.variant {
            Variant::Generic => LayerParams::Generic {
                message: Linear::new(store, &format!("{name}.message"), i, o, false, rng)?,
                update: Linear::new(store, &format!("{name}.update"), i + o, o, true, rng)?,
            },
            Variant::Gcn => LayerParams::Gcn {
                weight: Linear::new(store, &format!("{name}.weight"), i, o, false, rng)?,
            },
            Variant::Gin => {
                let hidden = config.gin_hidden.unwrap_or(o);
                let epsilon = config
                    .learn_epsilon
                    .then(|| store.add(format!("{name}.epsilon"), Array2::from_elem((1, 1), config.gin_epsilon)))
                    .transpose()?;
                let mlp = Mlp::new(
                    store,
                    &format!("{name}.mlp"),
                    &[i, hidden, o],
                    Activation::Relu,
                    Activation::Identity,
                    rng,
                )?;
                LayerParams::Gin { epsilon, mlp }
            }
            Variant::SageMean => LayerParams::SageMean {
                weight: Linear::new(store, &format!("{name}.weight"), 2 * i, o, false, rng)?,
            },
        };
        Ok(MessagePassing { config, params })
    }
}

impl NodeLayer for MessagePassing {
    fn in_dim(&self) -> usize {
        self.config.in_dim
    }

    fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn params(&self) -> Vec<ParamId> {
        match &self.params {
            LayerParams::Generic { message, update } => message.params().into_iter().chain(update.params()).collect(),
            LayerParams::Gcn { weight } | LayerParams::SageMean { weight } => weight.params(),
            LayerParams::Gin { epsilon, mlp } => epsilon.iter().copied().chain(mlp.params()).collect(),
        }
    }

    fn forward<'t>(&self, p: &Bound<'t>, input: &GraphInput<'_>, h: Var<'t>) -> Result<Var<'t>> {
        check_states(&h, input, self.config.in_dim)?;
        let n = input.num_nodes();
        let cfg = &self.config;
        let out = match &self.params {
            LayerParams::Generic { message, update } => {
                let idx = input.neighborhoods(cfg.neighborhood);
                let messages = message.forward(p, h)?.gather_rows(idx.sources())?;
                let agg = messages.segment_reduce(idx.targets(), n, cfg.aggregator)?;
                update.forward(p, concat_cols(&[h, agg])?)?
            }
            LayerParams::Gcn { weight } => {
                let norm = input.gcn_norm()?;
                let hw = weight.forward(p, h)?;
                let coeffs = column(&h, norm.coefficients.clone());
                hw.gather_rows(norm.index.sources())?
                    .mul(coeffs)?
                    .segment_sum(norm.index.targets(), n)?
            }
            LayerParams::Gin { epsilon, mlp } => {
                let idx = input.neighborhoods(cfg.neighborhood);
                let agg = h.gather_rows(idx.sources())?.segment_sum(idx.targets(), n)?;
                let one_plus_eps = match epsilon {
                    Some(e) => p.var(*e).add_scalar(1.0),
                    None => h.tape().scalar(1.0 + cfg.gin_epsilon),
                };
                mlp.forward(p, h.mul(one_plus_eps)?.add(agg)?)?
            }
            LayerParams::SageMean { weight } => {
                let idx = input.neighborhoods(cfg.neighborhood);
                let agg = h.gather_rows(idx.sources())?.segment_sum(idx.targets(), n)?;
                let inv = idx.degrees().iter().map(|&d| 1.0 / d.max(1) as f64).collect();
                let z = concat_cols(&[h, agg])?.mul(column(&h, inv))?;
                weight.forward(p, z)?
            }
        };
        Ok(cfg.activation.apply(out))
    }
}

/// Result of [`recurrent_iterate`].
pub struct RecurrentOutput<'t> {
    pub states: Var<'t>,
    /// Number of layer applications performed.
    pub iterations: usize,
    /// True when the last application changed no state by `tol` or more (max-norm).
    pub converged: bool,
}

pub const DEFAULT_RECURRENT_TOL: f64 = 1e-6;
pub const DEFAULT_RECURRENT_MAX_ITERS: usize = 50;

/// Applies one layer repeatedly with shared parameters until the max-norm
/// state change drops below `tol` or `max_iters` applications have run.
pub fn recurrent_iterate<'t>(
    layer: &dyn NodeLayer,
    p: &Bound<'t>,
    input: &GraphInput<'_>,
    h0: Var<'t>,
    max_iters: usize,
    tol: f64,
) -> Result<RecurrentOutput<'t>> {
    if layer.in_dim() != layer.out_dim() {
        bail!(Shape, "recurrent layer must map {0} -> {0}, got {0} -> {1}", layer.in_dim(), layer.out_dim());
    }
    let mut h = h0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iters {
        let next = layer.forward(p, input, h)?;
        iterations += 1;
        let delta = (&*next.value() - &*h.value()).fold(0.0f64, |m, d| m.max(d.abs()));
        h = next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(RecurrentOutput {
        states: h,
        iterations,
        converged,
    })
}

/// Applies `layers` in sequence. With `concat_all`, returns the column-wise
/// concatenation of every layer's output instead of the last one.
pub fn stack_forward<'t>(
    layers: &[&dyn NodeLayer],
    p: &Bound<'t>,
    input: &GraphInput<'_>,
    h0: Var<'t>,
    concat_all: bool,
) -> Result<Var<'t>> {
    let mut width = h0.cols();
    for (i, l) in layers.iter().enumerate() {
        if l.in_dim() != width {
            bail!(Shape, "layer {i} expects width {}, previous output has {width}", l.in_dim());
        }
        width = l.out_dim();
    }
    let mut h = h0;
    let mut outputs = Vec::with_capacity(layers.len());
    for l in layers {
        h = l.forward(p, input, h)?;
        outputs.push(h);
    }
    if concat_all && !outputs.is_empty() {
        concat_cols(&outputs)
    } else {
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn star(leaves: usize) -> Graph {
        Graph::featureless(leaves + 1, (1..=leaves).map(|i| (i, 0)).collect())
            .unwrap()
            .symmetrize()
    }

    fn layer(variant: Variant, i: usize, o: usize) -> (ParamStore, MessagePassing) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = MessagePassing::new(LayerConfig::new(variant, i, o), &mut store, "l", &mut rng).unwrap();
        (store, l)
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).fill(0.0);
        }
    }

    #[test]
    fn zero_weights_give_activation_of_zero() {
        let g = star(3);
        let input = GraphInput::new(&g);
        for (variant, act) in [
            (Variant::Generic, Activation::Sigmoid),
            (Variant::Gcn, Activation::Sigmoid),
            (Variant::SageMean, Activation::Tanh),
        ] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let cfg = LayerConfig::new(variant, 2, 3).activation(act);
            let l = MessagePassing::new(cfg, &mut store, "l", &mut rng).unwrap();
            zero_all(&mut store);
            let tape = Tape::new();
            let p = store.bind(&tape);
            let h = tape.constant(Array2::from_elem((4, 2), 0.7));
            let out = l.forward(&p, &input, h).unwrap();
            assert!(out.value().iter().all(|&v| v == act.eval(0.0)), "{variant:?}");
        }
    }

    #[test]
    fn isolated_node_uses_only_its_own_state() {
        let g = Graph::featureless(2, vec![]).unwrap().symmetrize();
        let input = GraphInput::new(&g);
        let (store, l) = layer(Variant::Generic, 2, 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let a = l.forward(&p, &input, tape.constant(array![[0.5, -0.1], [0.3, 0.2]])).unwrap();
        let b = l.forward(&p, &input, tape.constant(array![[0.5, -0.1], [9.0, 9.0]])).unwrap();
        assert_eq!(a.value().row(0), b.value().row(0));
    }

    #[test]
    fn gcn_single_node_identity() {
        let g = Graph::featureless(1, vec![]).unwrap().symmetrize();
        let (mut store, l) = layer(Variant::Gcn, 2, 2);
        let LayerParams::Gcn { weight } = &l.params else { unreachable!() };
        store.set(weight.weight, Array2::eye(2)).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = array![[0.25, -3.0]];
        let out = l.forward(&p, &GraphInput::new(&g), tape.constant(h.clone())).unwrap();
        assert_eq!(*out.value(), h);
    }

    #[test]
    fn gcn_rejects_directed_graph() {
        let g = Graph::featureless(2, vec![(0, 1)]).unwrap();
        let (store, l) = layer(Variant::Gcn, 1, 1);
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert!(l.forward(&p, &GraphInput::new(&g), tape.constant(Array2::ones((2, 1)))).is_err());
    }

    fn identity_gin(dim: usize) -> (ParamStore, MessagePassing) {
        let (mut store, l) = layer(Variant::Gin, dim, dim);
        let LayerParams::Gin { mlp, .. } = &l.params else { unreachable!() };
        for lin in &mlp.layers {
            store.set(lin.weight, Array2::eye(dim)).unwrap();
        }
        (store, l)
    }

    #[test]
    fn gin_counts_neighbors() {
        let (store, l) = identity_gin(1);
        let g = star(3);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = l.forward(&p, &GraphInput::new(&g), tape.constant(Array2::ones((4, 1)))).unwrap();
        assert_eq!(out.value()[[0, 0]], 4.0);
        assert_eq!(out.value()[[1, 0]], 2.0);
    }

    #[test]
    fn gin_isolated_node_returns_own_state() {
        let (store, l) = identity_gin(2);
        let g = Graph::featureless(1, vec![]).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let out = l.forward(&p, &GraphInput::new(&g), tape.constant(array![[0.5, 2.0]])).unwrap();
        assert_eq!(*out.value(), array![[0.5, 2.0]]);
    }

    #[test]
    fn sage_isolated_node_uses_self_term() {
        let (store, l) = layer(Variant::SageMean, 2, 3);
        let LayerParams::SageMean { weight } = &l.params else { unreachable!() };
        let g = Graph::featureless(1, vec![]).unwrap();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h = array![[0.5, -1.0]];
        let out = l.forward(&p, &GraphInput::new(&g), tape.constant(h.clone())).unwrap();
        let w = store.get(weight.weight);
        let expected = h.dot(&w.slice(ndarray::s![0..2, ..]));
        assert_eq!(*out.value(), expected);
    }

    #[test]
    fn dimension_mismatch() {
        let (store, l) = layer(Variant::Generic, 2, 2);
        let g = star(2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        assert!(l.forward(&p, &GraphInput::new(&g), tape.constant(Array2::ones((3, 3)))).is_err());
        assert!(l.forward(&p, &GraphInput::new(&g), tape.constant(Array2::ones((2, 2)))).is_err());
    }

    #[test]
    fn recurrent_zero_weights_settle_on_bias() {
        let (mut store, l) = layer(Variant::Generic, 2, 2);
        zero_all(&mut store);
        let LayerParams::Generic { update, .. } = &l.params else { unreachable!() };
        store.set(update.bias.unwrap(), array![[0.5, -0.5]]).unwrap();
        let g = star(2);
        let input = GraphInput::new(&g);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h0 = tape.constant(Array2::ones((3, 2)));
        let first = l.forward(&p, &input, h0).unwrap();
        let out = recurrent_iterate(&l, &p, &input, h0, 10, 1e-6).unwrap();
        assert!(out.converged);
        // The first application reaches the fixed point; the second confirms it.
        assert_eq!(out.iterations, 2);
        assert_eq!(*out.states.value(), *first.value());
        assert!(out.states.value().rows().into_iter().all(|r| r == array![0.5, -0.5]));
    }

    #[test]
    fn recurrent_zero_iterations_returns_input() {
        let (store, l) = layer(Variant::Generic, 2, 2);
        let g = star(2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h0 = tape.constant(Array2::ones((3, 2)));
        let out = recurrent_iterate(&l, &p, &GraphInput::new(&g), h0, 0, 1e-6).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(!out.converged);
        assert_eq!(out.states.id(), h0.id());
    }

    #[test]
    fn recurrent_needs_square_layer() {
        let (store, l) = layer(Variant::Generic, 2, 3);
        let g = star(2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h0 = tape.constant(Array2::ones((3, 2)));
        assert!(recurrent_iterate(&l, &p, &GraphInput::new(&g), h0, 5, 1e-6).is_err());
    }

    #[test]
    fn contraction_shrinks_successive_deltas() {
        let (mut store, l) = layer(Variant::Generic, 3, 3);
        let LayerParams::Generic { message, update } = &l.params else { unreachable!() };
        // Operator norm of the affine map stays well below 1.
        for id in [message.weight, update.weight] {
            let w = store.get(id).mapv(|v| 0.15 * v);
            store.set(id, w).unwrap();
        }
        let g = star(4);
        let input = GraphInput::new(&g);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let mut h = tape.constant(Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - j as f64) * 0.4));
        let mut deltas = Vec::new();
        for _ in 0..12 {
            let next = l.forward(&p, &input, h).unwrap();
            deltas.push((&*next.value() - &*h.value()).mapv(|d| d * d).sum().sqrt());
            h = next;
        }
        assert!(deltas.windows(2).all(|w| w[1] < w[0]), "{deltas:?}");
    }

    #[test]
    fn stack_edge_cases() {
        let (store, l) = layer(Variant::Generic, 2, 2);
        let g = star(2);
        let input = GraphInput::new(&g);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let h0 = tape.constant(Array2::ones((3, 2)));
        assert_eq!(stack_forward(&[], &p, &input, h0, false).unwrap().id(), h0.id());
        let single = stack_forward(&[&l], &p, &input, h0, false).unwrap();
        assert_eq!(*single.value(), *l.forward(&p, &input, h0).unwrap().value());
        let both = stack_forward(&[&l, &l], &p, &input, h0, true).unwrap();
        assert_eq!(both.shape(), (3, 4));
        let (store3, l3) = layer(Variant::Generic, 3, 3);
        let _ = store3;
        assert!(stack_forward(&[&l, &l3], &p, &input, h0, false).is_err());
    }
}
