use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Graph, GraphError, Result};
use crate::matrix::Matrix;

/// Train/validation/test membership over the nodes of one graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMasks {
    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mask = |idx: &[usize]| -> Result<Vec<bool>> {
            let mut m = vec![false; n];
            for &i in idx {
                if i >= n {
                    return Err(GraphError::Invalid(format!("mask index {i} >= {n}")));
                }
                m[i] = true;
            }
            Ok(m)
        };
        let masks = Self { train: mask(train)?, val: mask(val)?, test: mask(test)? };
        masks.validate()?;
        Ok(masks)
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    /// Checks equal lengths and pairwise disjointness.
    pub fn validate(&self) -> Result<()> {
        let n = self.train.len();
        if self.val.len() != n || self.test.len() != n {
            return Err(GraphError::Invalid("mask lengths differ".into()));
        }
        for i in 0..n {
            let c = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if c > 1 {
                return Err(GraphError::Invalid(format!("node {i} appears in more than one split")));
            }
        }
        Ok(())
    }

    /// As [`validate`](Self::validate), additionally requiring every split to be nonempty.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        for (name, m) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if !m.iter().any(|&b| b) {
                return Err(GraphError::Invalid(format!("{name} split is empty")));
            }
        }
        Ok(())
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect()
    }
}

/// Bookkeeping produced by file loaders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadMeta {
    /// Node id string per node index, in first-seen order.
    pub node_ids: Vec<String>,
    /// Class name per class id.
    pub class_names: Vec<String>,
    /// Edge lines read from the edge file.
    pub raw_edge_lines: usize,
    /// Distinct undirected pairs after symmetrization.
    pub unique_edges: usize,
    /// Edge lines skipped because they reference unknown node ids.
    pub skipped_edge_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDataset {
    pub name: String,
    pub graph: Graph,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub masks: Option<SplitMasks>,
    #[serde(default)]
    pub meta: LoadMeta,
}

impl NodeDataset {
    pub fn new(name: impl Into<String>, graph: Graph, features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self { name: name.into(), graph, features, labels, num_classes, masks: None, meta: LoadMeta::default() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.rows != n {
            return Err(GraphError::Invalid(format!("{} feature rows for {n} nodes", self.features.rows)));
        }
        if self.labels.len() != n {
            return Err(GraphError::Invalid(format!("{} labels for {n} nodes", self.labels.len())));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(GraphError::Invalid(format!("label {bad} >= num_classes {}", self.num_classes)));
        }
        if let Some(m) = &self.masks {
            if m.len() != n {
                return Err(GraphError::Invalid("mask length differs from node count".into()));
            }
            m.validate()?;
        }
        Ok(())
    }

    /// SHA-256 over graph, features and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"node");
        digest_graph(&mut h, &self.graph);
        digest_matrix(&mut h, &self.features);
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Node features per graph; `None` marks graphs whose features are synthesized later.
    pub features: Vec<Option<Matrix>>,
    pub graph_labels: Vec<usize>,
    pub num_classes: usize,
}

impl GraphDataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn missing_features(&self) -> bool {
        self.features.iter().any(Option::is_none)
    }

    /// Feature width shared by all graphs, or `None` if any graph lacks features.
    pub fn feature_dim(&self) -> Option<usize> {
        let mut dim = None;
        for f in &self.features {
            let d = f.as_ref()?.cols;
            if *dim.get_or_insert(d) != d {
                return None;
            }
        }
        dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph_labels.len() != self.graphs.len() || self.features.len() != self.graphs.len() {
            return Err(GraphError::Invalid("graph, feature and label counts differ".into()));
        }
        if let Some(&bad) = self.graph_labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(GraphError::Invalid(format!("graph label {bad} >= num_classes {}", self.num_classes)));
        }
        for (i, (g, f)) in self.graphs.iter().zip(&self.features).enumerate() {
            if let Some(f) = f {
                if f.rows != g.num_nodes() {
                    return Err(GraphError::Invalid(format!("graph {i}: {} feature rows for {} nodes", f.rows, g.num_nodes())));
                }
            }
        }
        Ok(())
    }

    pub fn mean_nodes(&self) -> f64 {
        if self.graphs.is_empty() {
            return 0.0;
        }
        self.graphs.iter().map(Graph::num_nodes).sum::<usize>() as f64 / self.graphs.len() as f64
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"graph");
        for (g, f) in self.graphs.iter().zip(&self.features) {
            digest_graph(&mut h, g);
            match f {
                Some(m) => digest_matrix(&mut h, m),
                None => h.update(b"none"),
            }
        }
        for &l in &self.graph_labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Either kind of task input.
#[derive(Debug, Clone)]
pub enum Dataset {
    Node(NodeDataset),
    Graph(GraphDataset),
}

impl Dataset {
    pub fn name(&self) -> &str {
        match self {
            Dataset::Node(d) => &d.name,
            Dataset::Graph(d) => &d.name,
        }
    }

    pub fn digest(&self) -> String {
        match self {
            Dataset::Node(d) => d.digest(),
            Dataset::Graph(d) => d.digest(),
        }
    }

    /// Nodes for node tasks, graphs for graph tasks.
    pub fn size(&self) -> usize {
        match self {
            Dataset::Node(d) => d.num_nodes(),
            Dataset::Graph(d) => d.len(),
        }
    }
}

fn digest_graph(h: &mut Sha256, g: &Graph) {
    h.update((g.num_nodes() as u64).to_le_bytes());
    for &o in g.row_offsets() {
        h.update((o as u64).to_le_bytes());
    }
    for &c in g.col_indices() {
        h.update((c as u64).to_le_bytes());
    }
}

fn digest_matrix(h: &mut Sha256, m: &Matrix) {
    h.update((m.rows as u64).to_le_bytes());
    h.update((m.cols as u64).to_le_bytes());
    for &v in &m.data {
        h.update(v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_must_be_disjoint() {
        assert!(SplitMasks::from_indices(4, &[0, 1], &[1], &[2]).is_err());
        let m = SplitMasks::from_indices(4, &[0], &[1], &[2, 3]).unwrap();
        assert_eq!(SplitMasks::indices(&m.test), vec![2, 3]);
    }

    #[test]
    fn empty_split_rejected_for_training() {
        let m = SplitMasks::from_indices(3, &[0], &[1], &[]).unwrap();
        assert!(m.validate_for_training().is_err());
    }

    #[test]
    fn labels_checked() {
        let g = Graph::empty(2);
        assert!(NodeDataset::new("x", g.clone(), Matrix::zeros(2, 1), vec![0, 2], 2).is_err());
        assert!(NodeDataset::new("x", g, Matrix::zeros(2, 1), vec![0, 1], 2).is_ok());
    }

    #[test]
    fn digest_changes_with_labels() {
        let g = Graph::empty(2);
        let a = NodeDataset::new("x", g.clone(), Matrix::zeros(2, 1), vec![0, 1], 2).unwrap();
        let b = NodeDataset::new("x", g, Matrix::zeros(2, 1), vec![1, 1], 2).unwrap();
        assert_ne!(a.digest(), b.digest());
    }
}
