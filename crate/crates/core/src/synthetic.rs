//! Seeded synthetic datasets for tests and the self-check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{build_graph, GraphDataset, NodeDataset, Result};
use crate::matrix::Matrix;

/// Stochastic block model with noisy class-indicative features.
///
/// Node `v` belongs to class `v % num_classes`. Each feature row is the
/// one-hot class code scaled by `signal` plus uniform noise on `[0, 1)`,
/// padded with pure-noise columns up to `feat_dim`.
pub fn sbm_node_dataset(n: usize, num_classes: usize, p_in: f64, p_out: f64, feat_dim: usize, signal: f64, seed: u64) -> Result<NodeDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|v| v % num_classes).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let d = feat_dim.max(num_classes);
    let mut x = Matrix::zeros(n, d);
    for v in 0..n {
        for c in 0..d {
            x.set(v, c, rng.gen::<f64>());
        }
        let c = labels[v];
        x.set(v, c, x.get(v, c) + signal);
    }
    let graph = build_graph(n, &edges, true)?;
    NodeDataset::new(format!("sbm-{n}-{seed}"), graph, x, labels, num_classes)
}

/// Two-class graph corpus: class 0 graphs are cycles, class 1 graphs are
/// cycles with random chords. Sizes vary in `[min_nodes, max_nodes]`.
/// Node features are a constant column and the node degree.
pub fn cycles_vs_chords(num_graphs: usize, min_nodes: usize, max_nodes: usize, seed: u64) -> Result<GraphDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(num_graphs);
    let mut features = Vec::with_capacity(num_graphs);
    let mut labels = Vec::with_capacity(num_graphs);
    for i in 0..num_graphs {
        let n = rng.gen_range(min_nodes.max(4)..=max_nodes.max(min_nodes.max(4)));
        let label = i % 2;
        let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
        if label == 1 {
            for _ in 0..(n / 2).max(2) {
                let u = rng.gen_range(0..n);
                let v = rng.gen_range(0..n);
                if u != v {
                    edges.push((u, v));
                }
            }
        }
        let g = build_graph(n, &edges, true)?;
        let x = Matrix::from_vec(n, 2, (0..n).flat_map(|v| [1.0, g.degree(v) as f64]).collect());
        graphs.push(g);
        features.push(Some(x));
        labels.push(label);
    }
    let ds = GraphDataset { name: format!("cycles-{num_graphs}-{seed}"), graphs, features, graph_labels: labels, num_classes: 2 };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_is_deterministic_and_labelled() {
        let a = sbm_node_dataset(60, 3, 0.2, 0.01, 8, 1.0, 4).unwrap();
        let b = sbm_node_dataset(60, 3, 0.2, 0.01, 8, 1.0, 4).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.features.cols, 8);
        assert!(a.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn chords_add_edges() {
        let ds = cycles_vs_chords(20, 6, 10, 1).unwrap();
        for (g, &y) in ds.graphs.iter().zip(&ds.graph_labels) {
            if y == 0 {
                assert_eq!(g.num_undirected_edges(), g.num_nodes());
            }
        }
        assert!(ds.graphs.iter().zip(&ds.graph_labels).any(|(g, &y)| y == 1 && g.num_undirected_edges() > g.num_nodes()));
    }
}
