//! JSON-lines graph corpora, one graph per line:
//!
//! ```text
//! {"n": 3, "arcs": [[0,1],[1,2]], "x": [[1.0],[1.0],[1.0]], "edge_attr": [[0.5],[0.2]],
//!  "y_node": [0,1,0], "y_graph": 1, "directed": false}
//! ```
//!
//! `edge_attr`, `y_node` and `y_graph` are optional. `x_dim` and `edge_dim`
//! give feature widths when the matching matrix has no rows. Undirected
//! records are symmetrized on load.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{matrix_from_rows, Graph, GraphTarget, NodeTargets};

#[derive(Debug, Serialize, Deserialize)]
pub struct GraphRecord {
    pub n: usize,
    pub arcs: Vec<[usize; 2]>,
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_attr: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_node: Option<NodeTargets>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_graph: Option<GraphTarget>,
    pub directed: bool,
}

impl GraphRecord {
    pub fn into_graph(self) -> Result<Graph> {
        let arcs = self.arcs.iter().map(|&[u, v]| (u, v)).collect();
        let x = matrix_from_rows(&self.x, self.x_dim.unwrap_or(0))?;
        let a = self
            .edge_attr
            .as_deref()
            .map(|rows| matrix_from_rows(rows, self.edge_dim.unwrap_or(0)))
            .transpose()?;
        let g = Graph::new(self.n, arcs, x, a)?
            .with_node_targets(self.y_node)?
            .with_graph_target(self.y_graph)?;
        Ok(if self.directed { g } else { g.symmetrize() })
    }

    /// Record for `graph`; symmetrized graphs are written as undirected.
    pub fn from_graph(graph: &Graph) -> Self {
        let rows = |m: &ndarray::Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
        GraphRecord {
            n: graph.num_nodes(),
            arcs: graph.arcs().iter().map(|&(u, v)| [u, v]).collect(),
            x: rows(graph.node_features()),
            x_dim: (graph.num_nodes() == 0).then(|| graph.feature_dim()),
            edge_attr: (graph.arc_feature_dim() > 0).then(|| rows(graph.arc_features())),
            edge_dim: (graph.arc_feature_dim() > 0 && graph.num_arcs() == 0).then(|| graph.arc_feature_dim()),
            y_node: graph.node_targets().cloned(),
            y_graph: graph.graph_target().cloned(),
            directed: !graph.is_symmetrized(),
        }
    }
}

pub fn parse_line(line: &str) -> Result<Graph> {
    let record: GraphRecord =
        serde_json::from_str(line).map_err(|e| Error::Format(format!("bad graph record: {e}")))?;
    record.into_graph()
}

/// Reads every non-blank line of `reader` as a graph.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<Graph>> {
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        graphs.push(parse_line(&line).map_err(|e| Error::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(graphs)
}

pub fn write_corpus<W: Write>(mut writer: W, graphs: &[Graph]) -> Result<()> {
    for g in graphs {
        let line = serde_json::to_string(&GraphRecord::from_graph(g))
            .map_err(|e| Error::Format(e.to_string()))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn load_corpus(path: &std::path::Path) -> Result<Vec<Graph>> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}
