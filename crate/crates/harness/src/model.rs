//! Model assembly from a layer stack description.

use std::borrow::Cow;
use std::collections::BTreeSet;

use dgn_core::edge_attention::{
    sample_neighbors, AttentionConfig, EccLayer, EdgeConditionedConfig, GatLayer, HeadMerge, RelationalConfig,
    RgcnLayer,
};
use dgn_core::graph::{make_batch, GraphTarget, NeighborhoodMode, NodeTargets};
use dgn_core::layers::{
    recurrent_iterate, GraphInput, LayerConfig, MessagePassing, NodeLayer, Variant, DEFAULT_RECURRENT_MAX_ITERS,
    DEFAULT_RECURRENT_TOL,
};
use dgn_core::loss::GraphDecoder;
use dgn_core::nn::{Activation, Mlp};
use dgn_core::pooling::{self, CoarseAdjacency, DenseConv, EdgePool, PoolOutput};
use dgn_core::readout::{Readout, ReadoutConfig, ReadoutMode};
use dgn_core::tensor::concat_rows;
use dgn_core::{BatchedGraph, Bound, Graph, ParamId, ParamStore, Var};

use crate::config::{DecoderKind, ExperimentConfig, LayerKind, LayerSpec, Task, TrainingMode};
use crate::data::{stream, stream_rng, Dataset};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug)]
pub enum ConvLayer {
    MessagePassing(MessagePassing),
    Rgcn(RgcnLayer),
    Ecc(EccLayer),
    Gat(GatLayer),
}

impl ConvLayer {
    pub fn as_layer(&self) -> &dyn NodeLayer {
        match self {
            ConvLayer::MessagePassing(l) => l,
            ConvLayer::Rgcn(l) => l,
            ConvLayer::Ecc(l) => l,
            ConvLayer::Gat(l) => l,
        }
    }
}

#[derive(Clone, Debug)]
pub enum StackItem {
    Conv {
        layer: ConvLayer,
        /// `(max applications, tolerance)` for recurrent layers.
        recurrent: Option<(usize, f64)>,
        fanout: Option<usize>,
    },
    TopK {
        projection: ParamId,
        ratio: f64,
    },
    SagPool {
        scorer: MessagePassing,
        ratio: f64,
    },
    EdgePool(EdgePool),
    DiffPool(DenseConv),
}

impl StackItem {
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            StackItem::Conv { layer, .. } => layer.as_layer().params(),
            StackItem::TopK { projection, .. } => vec![*projection],
            StackItem::SagPool { scorer, .. } => scorer.params(),
            StackItem::EdgePool(e) => e.params(),
            StackItem::DiffPool(d) => d.params(),
        }
    }
}

/// Result of running the model on a set of graphs.
pub struct Forward<'t> {
    /// Node rows (node-level tasks) or graph rows (graph-level tasks).
    pub output: Var<'t>,
    pub aux: Vec<Var<'t>>,
    /// Applications performed by each recurrent layer, in stack order.
    pub iterations: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub task: Task,
    pub items: Vec<StackItem>,
    /// One readout per stage (graph-level tasks only).
    pub readouts: Vec<Readout>,
    /// One output head per stage.
    pub heads: Vec<Mlp>,
    pub decoder: Option<GraphDecoder>,
    pub output_dim: usize,
    pub constructive: bool,
    /// Width of the node states after each stack item.
    pub widths: Vec<usize>,
}

fn bad(msg: String) -> HarnessError {
    HarnessError::Config(msg)
}

/// Number of classes named by the targets of `graphs`.
pub fn infer_classes(task: Task, graphs: &[&Graph]) -> Result<usize> {
    let mut max = None;
    for g in graphs {
        if task.is_graph_level() {
            match g.graph_target() {
                Some(GraphTarget::Class(c)) => max = max.max(Some(*c)),
                _ => return Err(HarnessError::Data("graph classification needs class graph targets".into())),
            }
        } else {
            match g.node_targets() {
                Some(NodeTargets::Classes(c)) => max = max.max(c.iter().copied().max()),
                _ => return Err(HarnessError::Data("node classification needs class node targets".into())),
            }
        }
    }
    Ok(max.map_or(2, |m| (m + 1).max(2)))
}

fn regression_width(graphs: &[&Graph]) -> Result<usize> {
    let widths: BTreeSet<usize> = graphs
        .iter()
        .map(|g| g.graph_target().map(|t| t.values().len()))
        .collect::<Option<_>>()
        .ok_or_else(|| HarnessError::Data("graph regression needs graph targets".into()))?;
    match widths.into_iter().collect::<Vec<_>>().as_slice() {
        [w] => Ok(*w),
        other => Err(HarnessError::Data(format!("inconsistent target widths {other:?}"))),
    }
}

fn readout_for(config: &ReadoutConfig, width: usize) -> ReadoutConfig {
    if config.mode != ReadoutMode::Deepsets {
        return config.clone();
    }
    let mut inner = if config.inner_dims.is_empty() { vec![width, width] } else { config.inner_dims.clone() };
    inner[0] = width;
    let last = *inner.last().expect("non-empty");
    let mut outer = if config.outer_dims.is_empty() { vec![last, last] } else { config.outer_dims.clone() };
    outer[0] = last;
    ReadoutConfig::deepsets(inner, outer)
}

impl Model {
    pub fn new(config: &ExperimentConfig, data: &Dataset) -> Result<Self> {
        let graphs = data.graphs();
        let mut rng = stream_rng(config.seed, stream::INIT);
        let mut store = ParamStore::new();
        let task = config.task;
        let latent = config.embedding_dim;
        let output_dim = match task {
            _ if task.is_classification() => match config.num_classes {
                Some(c) => c,
                None => infer_classes(task, &graphs)?,
            },
            Task::GraphRegression => regression_width(&graphs)?,
            Task::Autoencode if config.variational => 2 * latent,
            _ => latent,
        };
        let arc_dim = graphs.first().map_or(0, |g| g.arc_feature_dim());

        let mut width = data.feature_dim();
        let mut widths = Vec::new();
        let mut items = Vec::new();
        for (i, spec) in config.layers.iter().enumerate() {
            let name = format!("layer{i}");
            let item = build_item(spec, &name, width, arc_dim, &mut store, &mut rng)?;
            width = match (&item, spec.kind) {
                (StackItem::Conv { layer, .. }, _) => layer.as_layer().out_dim(),
                _ => width,
            };
            widths.push(width);
            items.push(item);
        }

        let constructive = config.training == TrainingMode::Constructive;
        let stages: Vec<usize> = if constructive { (0..items.len()).collect() } else { vec![items.len() - 1] };
        let mut readouts = Vec::new();
        let mut heads = Vec::new();
        for (s, &last) in stages.iter().enumerate() {
            let mut w = widths[last];
            if task.is_graph_level() {
                let r = Readout::new(&readout_for(&config.readout_config(), w), &mut store, &format!("readout{s}"), &mut rng)?;
                w = r.out_dim(w);
                readouts.push(r);
            }
            let mut dims = vec![w];
            dims.extend(&config.head_hidden);
            dims.push(output_dim);
            heads.push(Mlp::new(&mut store, &format!("head{s}"), &dims, Activation::Relu, Activation::Identity, &mut rng)?);
        }

        let decoder = if task == Task::Autoencode && config.decoder == DecoderKind::Graph {
            let k = match config.max_graph_nodes {
                Some(k) => k,
                None => graphs.iter().map(|g| g.num_nodes()).max().unwrap_or(1),
            };
            Some(GraphDecoder::new(&mut store, "decoder", latent, &[], k, &mut rng)?)
        } else {
            None
        };

        Ok(Model {
            store,
            task,
            items,
            readouts,
            heads,
            decoder,
            output_dim,
            constructive,
            widths,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.heads.len()
    }

    /// Stack items used at `stage`.
    pub fn depth(&self, stage: usize) -> usize {
        if self.constructive {
            stage + 1
        } else {
            self.items.len()
        }
    }

    pub fn final_stage(&self) -> usize {
        self.num_stages() - 1
    }

    /// Parameters updated while training `stage`.
    pub fn stage_params(&self, stage: usize) -> BTreeSet<ParamId> {
        let mut ids: BTreeSet<ParamId> = if self.constructive {
            self.items[stage].params().into_iter().collect()
        } else {
            self.items.iter().flat_map(StackItem::params).collect()
        };
        ids.extend(self.heads[stage].params());
        if let Some(r) = self.readouts.get(stage) {
            ids.extend(r.params());
        }
        if let Some(d) = &self.decoder {
            ids.extend(d.params());
        }
        ids
    }

    fn has_diffpool(&self, stage: usize) -> bool {
        self.items[..self.depth(stage)].iter().any(|i| matches!(i, StackItem::DiffPool(_)))
    }

    /// Runs the stack of `stage` on `graphs` and applies readout (graph-level
    /// tasks) and the stage head. `sample_seed` enables neighbor sampling.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        graphs: &[&Graph],
        stage: usize,
        sample_seed: Option<u64>,
    ) -> Result<Forward<'t>> {
        if self.has_diffpool(stage) && graphs.len() > 1 {
            // Dense coarsening runs one graph at a time.
            let parts = graphs
                .iter()
                .map(|g| self.forward(p, std::slice::from_ref(g), stage, sample_seed))
                .collect::<Result<Vec<_>>>()?;
            let output = concat_rows(&parts.iter().map(|f| f.output).collect::<Vec<_>>())?;
            let aux = parts.iter().flat_map(|f| f.aux.iter().copied()).collect();
            let mut iterations = vec![0; parts.first().map_or(0, |f| f.iterations.len())];
            for f in &parts {
                for (m, &i) in iterations.iter_mut().zip(&f.iterations) {
                    *m = (*m).max(i);
                }
            }
            return Ok(Forward { output, aux, iterations });
        }
        let owned: Vec<Graph> = graphs.iter().map(|&g| g.clone()).collect();
        let batch = make_batch(&owned)?;
        let (h, node_to_graph, num_graphs, aux, iterations) = self.run_stack(p, &batch, stage, sample_seed)?;
        let z = if self.task.is_graph_level() {
            self.readouts[stage].forward(p, h, &node_to_graph, num_graphs)?
        } else {
            h
        };
        let output = self.heads[stage].forward(p, z)?;
        Ok(Forward { output, aux, iterations })
    }

    #[allow(clippy::type_complexity)]
    fn run_stack<'t>(
        &self,
        p: &Bound<'t>,
        batch: &BatchedGraph,
        stage: usize,
        sample_seed: Option<u64>,
    ) -> Result<(Var<'t>, Vec<usize>, usize, Vec<Var<'t>>, Vec<usize>)> {
        let tape = p.var(self.heads[0].layers[0].weight).tape();
        let mut cur: Cow<BatchedGraph> = Cow::Borrowed(batch);
        let mut h = tape.constant(batch.graph.node_features().clone());
        let mut node_to_graph = batch.node_to_graph().to_vec();
        let num_graphs = batch.num_graphs();
        let mut aux = Vec::new();
        let mut iterations = Vec::new();
        for (i, item) in self.items[..self.depth(stage)].iter().enumerate() {
            let pooled: Option<PoolOutput<'t>> = match item {
                StackItem::Conv {
                    layer,
                    recurrent,
                    fanout,
                } => {
                    let input = match (fanout, sample_seed) {
                        (Some(f), Some(seed)) => GraphInput::with_index(
                            &cur.graph,
                            sample_neighbors(&cur.graph, *f, seed.wrapping_add(i as u64))?,
                        )?,
                        _ => GraphInput::new(&cur.graph),
                    };
                    h = match recurrent {
                        Some((max_iters, tol)) => {
                            let out = recurrent_iterate(layer.as_layer(), p, &input, h, *max_iters, *tol)?;
                            iterations.push(out.iterations);
                            out.states
                        }
                        None => layer.as_layer().forward(p, &input, h)?,
                    };
                    None
                }
                StackItem::TopK { projection, ratio } => Some(pooling::topk_pool(h, &cur, p.var(*projection), *ratio)?),
                StackItem::SagPool { scorer, ratio } => Some(pooling::sagpool(scorer, p, &cur, h, *ratio)?),
                StackItem::EdgePool(pool) => Some(pool.forward(p, &cur, h)?),
                StackItem::DiffPool(inner) => {
                    if cur.num_graphs() != 1 {
                        return Err(dgn_core::Error::Usage("dense pooling takes one graph at a time".into()).into());
                    }
                    let adjacency = tape.constant(cur.graph.dense_adjacency());
                    Some(pooling::diffpool(inner, p, adjacency, h)?)
                }
            };
            if let Some(out) = pooled {
                h = out.features;
                aux.extend(out.aux_losses.iter().map(|(_, v)| *v));
                match out.adjacency {
                    CoarseAdjacency::Sparse(b) => {
                        node_to_graph = b.node_to_graph().to_vec();
                        cur = Cow::Owned(b);
                    }
                    CoarseAdjacency::Dense(_) => node_to_graph = vec![0; h.rows()],
                }
            }
        }
        Ok((h, node_to_graph, num_graphs, aux, iterations))
    }
}

fn build_item<R: rand::Rng>(
    spec: &LayerSpec,
    name: &str,
    width: usize,
    arc_dim: usize,
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<StackItem> {
    let out = spec.out_dim.unwrap_or(0);
    let mp = |variant, store: &mut ParamStore, rng: &mut R| -> Result<ConvLayer> {
        let mut cfg = LayerConfig::new(variant, width, out)
            .activation(spec.activation)
            .aggregator(spec.aggregator)
            .neighborhood(spec.neighborhood.unwrap_or(NeighborhoodMode::Open));
        cfg.gin_epsilon = spec.gin_epsilon;
        cfg.learn_epsilon = spec.learn_epsilon;
        cfg.gin_hidden = spec.gin_hidden;
        Ok(ConvLayer::MessagePassing(MessagePassing::new(cfg, store, name, rng)?))
    };
    let conv = match spec.kind {
        LayerKind::Generic => Some(mp(Variant::Generic, store, rng)?),
        LayerKind::Gcn => Some(mp(Variant::Gcn, store, rng)?),
        LayerKind::Gin => Some(mp(Variant::Gin, store, rng)?),
        LayerKind::SageMean => Some(mp(Variant::SageMean, store, rng)?),
        LayerKind::Rgcn => Some(ConvLayer::Rgcn(RgcnLayer::new(
            RelationalConfig {
                in_dim: width,
                out_dim: out,
                num_relations: spec.num_relations.unwrap_or(1),
                relation_column: spec.relation_column,
                activation: spec.activation,
            },
            store,
            name,
            rng,
        )?)),
        LayerKind::Ecc => Some(ConvLayer::Ecc(EccLayer::new(
            EdgeConditionedConfig {
                in_dim: width,
                out_dim: out,
                arc_dim,
                edge_hidden: spec.edge_hidden.clone(),
                activation: spec.activation,
            },
            store,
            name,
            rng,
        )?)),
        LayerKind::Gat => {
            let mut cfg = AttentionConfig::new(width, out, spec.heads.unwrap_or(1));
            cfg.merge = spec.merge.unwrap_or(HeadMerge::Concat);
            cfg.activation = spec.activation;
            cfg.neighborhood = spec.neighborhood.unwrap_or(NeighborhoodMode::Closed);
            Some(ConvLayer::Gat(GatLayer::new(cfg, store, name, rng)?))
        }
        _ => None,
    };
    if let Some(layer) = conv {
        let l = layer.as_layer();
        if spec.recurrent && l.in_dim() != l.out_dim() {
            return Err(bad(format!("{name}: a recurrent layer must keep width {} but outputs {}", l.in_dim(), l.out_dim())));
        }
        let recurrent = spec.recurrent.then(|| {
            (
                spec.max_iters.unwrap_or(DEFAULT_RECURRENT_MAX_ITERS),
                spec.tol.unwrap_or(DEFAULT_RECURRENT_TOL),
            )
        });
        return Ok(StackItem::Conv {
            layer,
            recurrent,
            fanout: spec.fanout,
        });
    }
    Ok(match spec.kind {
        LayerKind::Topk => StackItem::TopK {
            projection: store.add_glorot(format!("{name}.projection"), width, 1, rng)?,
            ratio: spec.ratio.unwrap_or(0.5),
        },
        LayerKind::Sagpool => StackItem::SagPool {
            scorer: MessagePassing::new(LayerConfig::new(Variant::Gcn, width, 1), store, &format!("{name}.scorer"), rng)?,
            ratio: spec.ratio.unwrap_or(0.5),
        },
        LayerKind::Edgepool => StackItem::EdgePool(EdgePool::new(store, name, width, rng)?),
        LayerKind::Diffpool => StackItem::DiffPool(DenseConv::new(
            store,
            &format!("{name}.assign"),
            width,
            spec.clusters.unwrap_or(1),
            rng,
        )?),
        _ => unreachable!("convolutions handled above"),
    })
}
