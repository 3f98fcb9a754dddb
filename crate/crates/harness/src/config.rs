//! Experiment configuration, read from TOML.
//!
//! ```toml
//! task = "graph_classification"
//! seed = 1
//! epochs = 100
//! optimizer = "adam"
//! learning_rate = 0.01
//! batch_size = 32
//!
//! [data]
//! generator = "cycles_vs_paths"
//! num_graphs = 200
//!
//! [[layers]]
//! kind = "gin"
//! out_dim = 16
//! activation = "relu"
//!
//! [readout]
//! mode = "sum"
//! ```

use std::path::{Path, PathBuf};

use dgn_core::edge_attention::HeadMerge;
use dgn_core::graph::NeighborhoodMode;
use dgn_core::nn::Activation;
use dgn_core::readout::{ReadoutConfig, ReadoutMode};
use dgn_core::tensor::SegmentMode;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassificationTransductive,
    NodeClassificationInductive,
    GraphClassification,
    GraphRegression,
    LinkPrediction,
    Autoencode,
}

impl Task {
    pub fn is_graph_level(self) -> bool {
        matches!(self, Task::GraphClassification | Task::GraphRegression)
    }

    pub fn is_classification(self) -> bool {
        matches!(
            self,
            Task::NodeClassificationTransductive | Task::NodeClassificationInductive | Task::GraphClassification
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    EndToEnd,
    /// Stage `s` trains stack item `s` and a fresh output head; earlier items are frozen.
    Constructive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// `σ(z_u · z_v)` for every node pair.
    #[default]
    Node,
    /// One-shot adjacency from the graph embedding.
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoCommunity,
    CyclesVsPaths,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Generic,
    Gcn,
    Gin,
    SageMean,
    Rgcn,
    Ecc,
    Gat,
    Topk,
    Sagpool,
    Edgepool,
    Diffpool,
}

impl LayerKind {
    pub fn is_pooling(self) -> bool {
        matches!(self, LayerKind::Topk | LayerKind::Sagpool | LayerKind::Edgepool | LayerKind::Diffpool)
    }
}

/// One entry of the layer stack. Fields that do not apply to `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Output width; per head for `gat`. Unused by pooling.
    #[serde(default)]
    pub out_dim: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "sum")]
    pub aggregator: SegmentMode,
    #[serde(default)]
    pub neighborhood: Option<NeighborhoodMode>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub merge: Option<HeadMerge>,
    #[serde(default)]
    pub num_relations: Option<usize>,
    #[serde(default)]
    pub relation_column: usize,
    #[serde(default)]
    pub edge_hidden: Vec<usize>,
    #[serde(default)]
    pub gin_epsilon: f64,
    #[serde(default = "yes")]
    pub learn_epsilon: bool,
    #[serde(default)]
    pub gin_hidden: Option<usize>,
    /// Kept fraction for `topk` and `sagpool`.
    #[serde(default)]
    pub ratio: Option<f64>,
    /// Cluster count for `diffpool`.
    #[serde(default)]
    pub clusters: Option<usize>,
    /// Apply the layer repeatedly with shared weights until its states settle.
    #[serde(default)]
    pub recurrent: bool,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Neighbors sampled per node during training (evaluation uses all).
    #[serde(default)]
    pub fanout: Option<usize>,
}

fn sum() -> SegmentMode {
    SegmentMode::Sum
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec {
            kind,
            out_dim: None,
            activation: Activation::Identity,
            aggregator: SegmentMode::Sum,
            neighborhood: None,
            heads: None,
            merge: None,
            num_relations: None,
            relation_column: 0,
            edge_hidden: Vec::new(),
            gin_epsilon: 0.0,
            learn_epsilon: true,
            gin_hidden: None,
            ratio: None,
            clusters: None,
            recurrent: false,
            max_iters: None,
            tol: None,
            fanout: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub generator: Option<Generator>,
    /// JSON-lines corpus, used when no generator is given.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "one")]
    pub num_graphs: usize,
    #[serde(default = "six")]
    pub min_nodes: usize,
    #[serde(default = "twelve")]
    pub max_nodes: usize,
    #[serde(default = "thirty")]
    pub n_per_block: usize,
    #[serde(default = "p_in")]
    pub p_in: f64,
    #[serde(default = "p_out")]
    pub p_out: f64,
    /// Train, validation and test fractions for graph lists.
    #[serde(default = "split")]
    pub split: [f64; 3],
    /// Node masks for transductive node classification.
    #[serde(default)]
    pub train_nodes: Vec<usize>,
    #[serde(default)]
    pub val_nodes: Vec<usize>,
    #[serde(default)]
    pub test_nodes: Vec<usize>,
    /// Fraction of undirected edges held out for link prediction.
    #[serde(default = "holdout")]
    pub holdout_fraction: f64,
}

fn one() -> usize {
    1
}
fn six() -> usize {
    6
}
fn twelve() -> usize {
    12
}
fn thirty() -> usize {
    30
}
fn p_in() -> f64 {
    0.3
}
fn p_out() -> f64 {
    0.02
}
fn split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}
fn holdout() -> f64 {
    0.2
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            generator: None,
            path: None,
            num_graphs: one(),
            min_nodes: six(),
            max_nodes: twelve(),
            n_per_block: thirty(),
            p_in: p_in(),
            p_out: p_out(),
            split: split(),
            train_nodes: Vec::new(),
            val_nodes: Vec::new(),
            test_nodes: Vec::new(),
            holdout_fraction: holdout(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "lr")]
    pub learning_rate: f64,
    #[serde(default = "batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub training: TrainingMode,
    pub data: DataSpec,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub readout: Option<ReadoutConfig>,
    /// Hidden widths of the output head.
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    /// Class count; inferred from the labels when absent.
    #[serde(default)]
    pub num_classes: Option<usize>,
    /// Node embedding width for link prediction and autoencoding.
    #[serde(default = "embedding")]
    pub embedding_dim: usize,
    /// Weight of auxiliary pooling losses.
    #[serde(default = "unit")]
    pub aux_weight: f64,
    #[serde(default)]
    pub decoder: DecoderKind,
    #[serde(default = "yes")]
    pub variational: bool,
    #[serde(default = "unit")]
    pub kl_weight: f64,
    /// Decoder size `k` for one-shot adjacency decoding; defaults to the largest graph.
    #[serde(default)]
    pub max_graph_nodes: Option<usize>,
    /// Evaluate every this many epochs (and always after the last).
    #[serde(default = "one")]
    pub eval_every: usize,
}

fn epochs() -> usize {
    100
}
fn lr() -> f64 {
    0.01
}
fn batch() -> usize {
    32
}
fn embedding() -> usize {
    16
}
fn unit() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(p) = &config.data.path {
            if p.is_relative() {
                config.data.path = Some(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        Ok(config)
    }

    pub fn readout_config(&self) -> ReadoutConfig {
        self.readout.clone().unwrap_or_else(|| ReadoutConfig::new(ReadoutMode::Sum))
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("epochs, batch_size and eval_every must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.layers.is_empty() {
            return bad("the layer stack is empty".into());
        }
        let node_level = !self.task.is_graph_level() && self.task != Task::Autoencode;
        for (i, l) in self.layers.iter().enumerate() {
            if l.kind.is_pooling() && (node_level || self.task == Task::Autoencode) {
                return bad(format!("layer {i}: pooling is only available for graph-level tasks"));
            }
            if !l.kind.is_pooling() && l.out_dim.is_none_or(|d| d == 0) {
                return bad(format!("layer {i}: out_dim must be positive"));
            }
            if l.kind == LayerKind::Diffpool && i + 1 != self.layers.len() {
                return bad(format!("layer {i}: diffpool must be the last stack entry"));
            }
            if matches!(l.kind, LayerKind::Topk | LayerKind::Sagpool) && !l.ratio.is_some_and(|r| r > 0.0 && r <= 1.0) {
                return bad(format!("layer {i}: ratio must be in (0, 1]"));
            }
            if l.kind == LayerKind::Diffpool && l.clusters.is_none_or(|c| c == 0) {
                return bad(format!("layer {i}: diffpool needs clusters >= 1"));
            }
            if l.kind == LayerKind::Rgcn && l.num_relations.is_none_or(|k| k == 0) {
                return bad(format!("layer {i}: rgcn needs num_relations >= 1"));
            }
            if l.fanout == Some(0) {
                return bad(format!("layer {i}: fanout must be positive"));
            }
        }
        let d = &self.data;
        if d.generator.is_none() && d.path.is_none() {
            return bad("data needs a generator or a path".into());
        }
        for p in [d.p_in, d.p_out] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("probability {p} outside [0, 1]"));
            }
        }
        if d.split.iter().any(|&f| f < 0.0) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be non-negative and sum to 1", d.split));
        }
        if !(0.0..1.0).contains(&d.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)".into());
        }
        if d.min_nodes < 3 || d.max_nodes < d.min_nodes {
            return bad("node range must satisfy 3 <= min_nodes <= max_nodes".into());
        }
        if self.task == Task::NodeClassificationTransductive {
            let masks = [&d.train_nodes, &d.val_nodes, &d.test_nodes];
            if d.train_nodes.is_empty() {
                return bad("transductive training needs explicit train_nodes".into());
            }
            let mut seen = std::collections::BTreeSet::new();
            for m in masks {
                for &v in m {
                    if !seen.insert(v) {
                        return bad(format!("node {v} appears in more than one mask"));
                    }
                }
            }
        }
        Ok(())
    }
}
