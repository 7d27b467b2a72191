//! Graph storage, datasets, loaders and split construction.
//!
//! Graphs are stored in compressed-row form and are immutable once built.
//! Every loader symmetrizes its input, so downstream code can assume
//! undirected adjacency.

mod dataset;
pub mod io;
mod sparse;
mod split;

pub use dataset::{Dataset, GraphDataset, LoadMeta, NodeDataset, SplitMasks};
pub use sparse::{normalized_adjacency, row_normalized_adjacency, SparseMatrix};
pub use split::{planetoid_style_split, stratified_kfold, FoldPlan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) has an endpoint outside 0..{2}")]
    EndpointOutOfRange(usize, usize, usize),
    #[error("normalized adjacency requires an undirected graph")]
    Directed,
    #[error("node {0} has zero degree and self loops are disabled")]
    ZeroDegree(usize),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("edge on line {line} of {path} crosses graph boundary ({a} in graph {ga}, {b} in graph {gb})")]
    CrossGraphEdge { path: String, line: usize, a: usize, b: usize, ga: usize, gb: usize },
    #[error("class `{class}` has {have} members, need {need}")]
    InsufficientClass { class: usize, have: usize, need: usize },
    #[error("split needs {need} unlabeled nodes for val+test, only {have} remain")]
    InsufficientRemainder { need: usize, have: usize },
    #[error("k-fold requires k >= 2, got {0}")]
    InvalidFolds(usize),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Sparse graph in compressed-row form.
///
/// `col_indices[row_offsets[v]..row_offsets[v + 1]]` is the strictly
/// increasing neighbor list of `v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    undirected: bool,
}

impl Graph {
    /// Builds a graph from an edge list, collapsing duplicate edges.
    ///
    /// When `undirected` is set every edge is stored in both directions.
    /// Self loops are kept exactly once.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)], undirected: bool) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * if undirected { 2 } else { 1 });
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EndpointOutOfRange(u, v, num_nodes));
            }
            pairs.push((u, v));
            if undirected && u != v {
                pairs.push((v, u));
            }
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            row_offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Self { num_nodes, row_offsets, col_indices, undirected })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(num_nodes: usize) -> Self {
        Self { num_nodes, row_offsets: vec![0; num_nodes + 1], col_indices: Vec::new(), undirected: true }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn is_undirected(&self) -> bool {
        self.undirected
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    /// Number of stored (directed) adjacency entries.
    pub fn num_entries(&self) -> usize {
        self.col_indices.len()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    /// Row length, so a self loop counts once.
    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn has_self_loop(&self, v: usize) -> bool {
        self.has_edge(v, v)
    }

    /// Canonical edge list: for undirected graphs each pair once with `u <= v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if !self.undirected || u <= v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Number of undirected edges (self loops count once).
    pub fn num_undirected_edges(&self) -> usize {
        let loops = (0..self.num_nodes).filter(|&v| self.has_self_loop(v)).count();
        (self.col_indices.len() - loops) / 2 + loops
    }

    /// Subgraph induced by `keep`, relabeled to `0..keep.len()` in the given order.
    pub fn induced(&self, keep: &[usize]) -> Graph {
        let mut new_id = vec![usize::MAX; self.num_nodes];
        for (i, &v) in keep.iter().enumerate() {
            new_id[v] = i;
        }
        let mut row_offsets = Vec::with_capacity(keep.len() + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for &v in keep {
            let start = col_indices.len();
            col_indices.extend(self.neighbors(v).iter().filter_map(|&u| {
                let m = new_id[u];
                (m != usize::MAX).then_some(m)
            }));
            col_indices[start..].sort_unstable();
            row_offsets.push(col_indices.len());
        }
        Graph { num_nodes: keep.len(), row_offsets, col_indices, undirected: self.undirected }
    }

    /// Disjoint union; node ids of each part are shifted by the preceding sizes.
    pub fn disjoint_union<'a>(parts: impl IntoIterator<Item = &'a Graph>) -> Graph {
        let mut row_offsets = vec![0usize];
        let mut col_indices = Vec::new();
        let mut shift = 0usize;
        let mut undirected = true;
        for g in parts {
            undirected &= g.undirected;
            for v in 0..g.num_nodes {
                col_indices.extend(g.neighbors(v).iter().map(|&u| u + shift));
                row_offsets.push(col_indices.len());
            }
            shift += g.num_nodes;
        }
        Graph { num_nodes: shift, row_offsets, col_indices, undirected }
    }

    /// Checks every structural invariant; used by loaders and tests.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GraphError::Invalid(m.to_string()));
        if self.row_offsets.len() != self.num_nodes + 1 || self.row_offsets[0] != 0 {
            return bad("row_offsets has wrong length or start");
        }
        if self.row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_offsets decreasing");
        }
        if self.row_offsets[self.num_nodes] != self.col_indices.len() {
            return bad("row_offsets end does not match col_indices");
        }
        for v in 0..self.num_nodes {
            let nb = self.neighbors(v);
            if nb.iter().any(|&u| u >= self.num_nodes) {
                return bad("column index out of range");
            }
            if nb.windows(2).any(|w| w[0] >= w[1]) {
                return bad("neighbor list not strictly increasing");
            }
            if self.undirected && nb.iter().any(|&u| !self.has_edge(u, v)) {
                return bad("undirected graph is not symmetric");
            }
        }
        Ok(())
    }
}

/// Convenience wrapper matching the edge-list construction contract.
pub fn build_graph(num_nodes: usize, edges: &[(usize, usize)], undirected: bool) -> Result<Graph> {
    Graph::from_edges(num_nodes, edges, undirected)
}
