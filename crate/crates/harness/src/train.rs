//! Training loops and evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use dgn_core::graph::{GraphTarget, NodeTargets};
use dgn_core::loss::{
    adjacency_indicator, bce_with_logits, cross_entropy, graph_level_nll, kl_gaussian, mse, node_level_decoder_nll,
    padded_adjacency, pair_logits, GaussianParams,
};
use dgn_core::{Bound, Graph, Matrix, Tape, Var};

use crate::config::{ExperimentConfig, Task};
use crate::data::{stream, stream_rng, Dataset};
use crate::error::{HarnessError, Result};
use crate::metrics::{self, Evaluation, MetricRow, Metrics, Summary};
use crate::model::Model;
use crate::optim::Optimizer;

/// Loss settings shared by training and evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub aux: f64,
    pub kl: f64,
    pub variational: bool,
    pub latent: usize,
}

impl LossWeights {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        LossWeights {
            aux: config.aux_weight,
            kl: config.kl_weight,
            variational: config.variational,
            latent: config.embedding_dim,
        }
    }
}

/// A unit of work for one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    /// One graph, loss on the listed nodes.
    Nodes { graph: &'a Graph, mask: &'a [usize] },
    /// One graph, loss on labeled node pairs.
    Links { graph: &'a Graph, pairs: &'a [((usize, usize), bool)] },
    Graphs(&'a [&'a Graph]),
}

/// Summed loss and metric counts; merged across graphs in index order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tally {
    pub loss_sum: f64,
    pub loss_count: f64,
    pub metric_sum: f64,
    pub metric_count: f64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            loss_sum: self.loss_sum + o.loss_sum,
            loss_count: self.loss_count + o.loss_count,
            metric_sum: self.metric_sum + o.metric_sum,
            metric_count: self.metric_count + o.metric_count,
        }
    }

    pub fn evaluation(self) -> Evaluation {
        Evaluation {
            loss: self.loss_sum / self.loss_count.max(1.0),
            metric: self.metric_sum / self.metric_count.max(1.0),
        }
    }
}

/// Loss of one batch plus the metric tally of its predictions.
pub struct BatchLoss<'t> {
    pub loss: Var<'t>,
    pub tally: Tally,
    pub iterations: Vec<usize>,
}

fn class_targets(graph: &Graph) -> Result<&[usize]> {
    match graph.node_targets() {
        Some(NodeTargets::Classes(c)) => Ok(c),
        _ => Err(HarnessError::Data("node classification needs class node targets".into())),
    }
}

fn graph_target(graph: &Graph) -> Result<&GraphTarget> {
    graph
        .graph_target()
        .ok_or_else(|| HarnessError::Data("graph-level task needs graph targets".into()))
}

fn mean<'t>(vars: &[Var<'t>]) -> Result<Option<Var<'t>>> {
    let Some((first, rest)) = vars.split_first() else {
        return Ok(None);
    };
    let mut total = *first;
    for v in rest {
        total = total.add(*v)?;
    }
    Ok(Some(total.scale(1.0 / vars.len() as f64)))
}

fn standard_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Computes the training objective of `batch` at `stage`. `sample_seed`
/// enables neighbor sampling and `noise` the reparameterized latent draw.
pub fn batch_loss<'t>(
    model: &Model,
    p: &Bound<'t>,
    batch: Batch<'_>,
    stage: usize,
    weights: LossWeights,
    sample_seed: Option<u64>,
    mut noise: Option<&mut ChaCha8Rng>,
) -> Result<BatchLoss<'t>> {
    let graphs: Vec<&Graph> = match batch {
        Batch::Nodes { graph, .. } | Batch::Links { graph, .. } => vec![graph],
        Batch::Graphs(gs) => gs.to_vec(),
    };
    let fwd = model.forward(p, &graphs, stage, sample_seed)?;
    let out = fwd.output;
    let (task_loss, tally) = match (model.task, batch) {
        (Task::NodeClassificationTransductive, Batch::Nodes { graph, mask }) => {
            let all = class_targets(graph)?;
            let targets: Vec<usize> = mask.iter().map(|&v| all[v]).collect();
            let logits = out.gather_rows(mask)?;
            let loss = cross_entropy(logits, &targets)?;
            let n = mask.len() as f64;
            let tally = Tally {
                loss_sum: loss.item() * n,
                loss_count: n,
                metric_sum: metrics::accuracy(&logits.to_matrix(), &targets) * n,
                metric_count: n,
            };
            (loss, tally)
        }
        (Task::NodeClassificationInductive, Batch::Graphs(gs)) => {
            let mut targets = Vec::new();
            for g in gs {
                targets.extend_from_slice(class_targets(g)?);
            }
            let loss = cross_entropy(out, &targets)?;
            let n = targets.len() as f64;
            let tally = Tally {
                loss_sum: loss.item() * n,
                loss_count: n,
                metric_sum: metrics::accuracy(&out.to_matrix(), &targets) * n,
                metric_count: n,
            };
            (loss, tally)
        }
        (Task::GraphClassification, Batch::Graphs(gs)) => {
            let targets = gs
                .iter()
                .map(|g| {
                    graph_target(g)?
                        .class()
                        .ok_or_else(|| HarnessError::Data("graph classification needs class targets".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = cross_entropy(out, &targets)?;
            let n = targets.len() as f64;
            let tally = Tally {
                loss_sum: loss.item() * n,
                loss_count: n,
                metric_sum: metrics::accuracy(&out.to_matrix(), &targets) * n,
                metric_count: n,
            };
            (loss, tally)
        }
        (Task::GraphRegression, Batch::Graphs(gs)) => {
            let rows = gs.iter().map(|g| Ok(graph_target(g)?.values())).collect::<Result<Vec<_>>>()?;
            let width = out.cols();
            let target = dgn_core::graph::matrix_from_rows(&rows, width)?;
            let loss = mse(out, out.tape().constant(target.clone()))?;
            let n = rows.len() as f64;
            let tally = Tally {
                loss_sum: loss.item() * n,
                loss_count: n,
                metric_sum: metrics::mae(&out.to_matrix(), &target) * target.len() as f64,
                metric_count: target.len() as f64,
            };
            (loss, tally)
        }
        (Task::LinkPrediction, Batch::Links { pairs, .. }) => {
            let (ids, labels): (Vec<(usize, usize)>, Vec<bool>) = pairs.iter().copied().unzip();
            let logits = pair_logits(out, &ids)?;
            let y = Matrix::from_shape_fn((labels.len(), 1), |(i, _)| f64::from(u8::from(labels[i])));
            let n = labels.len() as f64;
            let loss = bce_with_logits(logits, &y)?.scale(1.0 / n.max(1.0));
            let z: Vec<f64> = logits.to_matrix().iter().copied().collect();
            let tally = Tally {
                loss_sum: loss.item() * n,
                loss_count: n,
                metric_sum: metrics::threshold_accuracy(&z, &labels) * n,
                metric_count: n,
            };
            (loss, tally)
        }
        (Task::Autoencode, Batch::Graphs(gs)) => {
            let mut losses = Vec::new();
            let mut tally = Tally::default();
            let mut offset = 0;
            for g in gs {
                let n = g.num_nodes();
                let rows = out.slice_rows(offset, offset + n)?;
                offset += n;
                let (z, kl) = if weights.variational {
                    let mu = rows.slice_cols(0, weights.latent)?;
                    let gp = GaussianParams::new(mu, rows.slice_cols(weights.latent, 2 * weights.latent)?)?;
                    let z = match noise.as_deref_mut() {
                        Some(rng) => gp.sample(standard_normal(rng, n, weights.latent))?,
                        None => mu,
                    };
                    let kl = kl_gaussian(&gp)?.scale(weights.kl / n.max(1) as f64);
                    (z, Some(kl))
                } else {
                    (rows, None)
                };
                let (rec, logits, target) = match &model.decoder {
                    Some(dec) => {
                        let logits = dec.logits(p, z.col_sums())?;
                        (graph_level_nll(logits, g)?, logits, padded_adjacency(g, dec.size)?)
                    }
                    None => {
                        let logits = z.matmul(z.transpose())?;
                        (node_level_decoder_nll(z, g)?, logits, adjacency_indicator(g))
                    }
                };
                let loss = match kl {
                    Some(kl) => rec.add(kl)?,
                    None => rec,
                };
                let z: Vec<f64> = logits.to_matrix().iter().copied().collect();
                let labels: Vec<bool> = target.iter().map(|&a| a > 0.5).collect();
                tally = tally.merge(Tally {
                    loss_sum: loss.item(),
                    loss_count: 1.0,
                    metric_sum: metrics::threshold_accuracy(&z, &labels) * labels.len() as f64,
                    metric_count: labels.len() as f64,
                });
                losses.push(loss);
            }
            let loss = mean(&losses)?.ok_or_else(|| HarnessError::Data("empty batch".into()))?;
            (loss, tally)
        }
        (task, _) => return Err(HarnessError::Config(format!("batch kind does not fit task {task:?}"))),
    };
    let loss = match mean(&fwd.aux)? {
        Some(aux) if weights.aux != 0.0 => task_loss.add(aux.scale(weights.aux))?,
        _ => task_loss,
    };
    Ok(BatchLoss {
        loss,
        tally,
        iterations: fwd.iterations,
    })
}

/// Deterministic evaluation of one split at `stage`. Graph lists are
/// evaluated one graph per task in parallel and merged in index order.
pub fn evaluate_split(model: &Model, split: Split<'_>, stage: usize, weights: LossWeights) -> Result<Option<Evaluation>> {
    let tally = match split {
        Split::Nodes { graph, mask } if !mask.is_empty() => eval_one(model, Batch::Nodes { graph, mask }, stage, weights)?,
        Split::Links { graph, pairs } if !pairs.is_empty() => eval_one(model, Batch::Links { graph, pairs }, stage, weights)?,
        Split::Graphs(gs) if !gs.is_empty() => {
            let parts = gs
                .par_iter()
                .map(|g| eval_one(model, Batch::Graphs(&[g]), stage, weights))
                .collect::<Result<Vec<_>>>()?;
            parts.into_iter().fold(Tally::default(), Tally::merge)
        }
        _ => return Ok(None),
    };
    Ok(Some(tally.evaluation()))
}

fn eval_one(model: &Model, batch: Batch<'_>, stage: usize, weights: LossWeights) -> Result<Tally> {
    let tape = Tape::new();
    let p = model.store.bind_with(&tape, |_| false);
    Ok(batch_loss(model, &p, batch, stage, weights, None, None)?.tally)
}

/// Evaluation data of one split.
#[derive(Clone, Copy, Debug)]
pub enum Split<'a> {
    Nodes { graph: &'a Graph, mask: &'a [usize] },
    Links { graph: &'a Graph, pairs: &'a [((usize, usize), bool)] },
    Graphs(&'a [Graph]),
}

pub fn splits(data: &Dataset) -> Vec<(&'static str, Split<'_>)> {
    match data {
        Dataset::Transductive { graph, train, val, test } => vec![
            ("train", Split::Nodes { graph, mask: train }),
            ("val", Split::Nodes { graph, mask: val }),
            ("test", Split::Nodes { graph, mask: test }),
        ],
        Dataset::Graphs { train, val, test } => {
            vec![("train", Split::Graphs(train)), ("val", Split::Graphs(val)), ("test", Split::Graphs(test))]
        }
        Dataset::Links(l) => vec![
            ("train", Split::Links { graph: &l.graph, pairs: &l.train }),
            ("test", Split::Links { graph: &l.graph, pairs: &l.test }),
        ],
    }
}

/// Evaluates every non-empty split with the final stage.
pub fn evaluate(model: &Model, data: &Dataset, weights: LossWeights) -> Result<BTreeMap<String, Evaluation>> {
    let mut out = BTreeMap::new();
    for (name, split) in splits(data) {
        if let Some(e) = evaluate_split(model, split, model.final_stage(), weights)? {
            out.insert(name.to_string(), e);
        }
    }
    Ok(out)
}

/// Trained model and its metrics.
pub struct Trained {
    pub model: Model,
    pub metrics: Metrics,
}

/// Trains `model` on `data` as `config` describes. Each constructive stage
/// runs `config.epochs` epochs with earlier stack items frozen.
pub fn train_model(config: &ExperimentConfig, data: &Dataset, model: Model) -> Result<Trained> {
    train_model_observed(config, data, model, &mut |_, _| {})
}

/// [`train_model`], calling `on_stage_end(stage, model)` after every stage.
pub fn train_model_observed(
    config: &ExperimentConfig,
    data: &Dataset,
    mut model: Model,
    on_stage_end: &mut dyn FnMut(usize, &Model),
) -> Result<Trained> {
    let start = Instant::now();
    let weights = LossWeights::from_config(config);
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate);
    let mut shuffle_rng = stream_rng(config.seed, stream::SHUFFLE);
    let mut noise_rng = stream_rng(config.seed, stream::NOISE);
    let mut sample_rng = stream_rng(config.seed, stream::SAMPLING);
    let mut rows = Vec::new();
    let mut iterations = Vec::new();
    let mut epoch = 0;
    let stages = model.num_stages();
    for stage in 0..stages {
        let trainable = model.stage_params(stage);
        for e in 0..config.epochs {
            epoch += 1;
            let units: Vec<Vec<usize>> = match data {
                Dataset::Graphs { train, .. } => {
                    let mut order: Vec<usize> = (0..train.len()).collect();
                    order.shuffle(&mut shuffle_rng);
                    order.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
                }
                _ => vec![Vec::new()],
            };
            for (b, ids) in units.iter().enumerate() {
                let picked: Vec<&Graph>;
                let batch = match data {
                    Dataset::Transductive { graph, train, .. } => Batch::Nodes { graph, mask: train },
                    Dataset::Links(l) => Batch::Links {
                        graph: &l.graph,
                        pairs: &l.train,
                    },
                    Dataset::Graphs { train, .. } => {
                        picked = ids.iter().map(|&i| &train[i]).collect();
                        Batch::Graphs(&picked)
                    }
                };
                let tape = Tape::new();
                let p = model.store.bind_with(&tape, |id| trainable.contains(&id));
                let seed = sample_rng.next_u64();
                let out = batch_loss(&model, &p, batch, stage, weights, Some(seed), Some(&mut noise_rng))?;
                let value = out.loss.item();
                if !value.is_finite() {
                    return Err(HarnessError::NonFinite { epoch, batch: b, value });
                }
                iterations = out.iterations;
                let grads = tape.backward(out.loss)?;
                let grads: Vec<_> = p.gradients(&grads).into_iter().filter(|(id, _)| trainable.contains(id)).collect();
                opt.step(&mut model.store, &grads);
            }
            let last = stage + 1 == stages && e + 1 == config.epochs;
            if epoch % config.eval_every == 0 || last {
                for (name, split) in splits(data) {
                    if let Some(ev) = evaluate_split(&model, split, stage, weights)? {
                        rows.push(MetricRow {
                            epoch,
                            split: name.to_string(),
                            loss: ev.loss,
                            metric: ev.metric,
                        });
                    }
                }
            }
        }
        on_stage_end(stage, &model);
    }
    let final_eval = evaluate(&model, data, weights)?;
    let summary = Summary {
        task: config.task,
        training: config.training,
        metric: metrics::metric_name(config.task).to_string(),
        seed: config.seed,
        epochs: epoch,
        stages,
        num_parameters: model.store.iter().map(|(_, _, v)| v.len()).sum(),
        final_eval,
        recurrent_iterations: iterations,
    };
    Ok(Trained {
        model,
        metrics: Metrics {
            rows,
            summary,
            wall_time: start.elapsed().as_secs_f64(),
        },
    })
}

/// Builds the dataset and model from `config` and trains.
pub fn train(config: &ExperimentConfig) -> Result<(Dataset, Trained)> {
    let data = Dataset::build(config)?;
    let model = Model::new(config, &data)?;
    let trained = train_model(config, &data, model)?;
    Ok((data, trained))
}
