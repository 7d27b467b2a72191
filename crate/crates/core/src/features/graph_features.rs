//! Graph-level descriptors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::generators::symmetric_eigen;
use super::{FeatureError, Result};
use crate::graph::Graph;

pub const DEFAULT_DENSE_EIGEN_CAP: usize = 3_000;
pub const HEAT_GRID_LEN: usize = 250;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFeatureVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl GraphFeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Concatenation; names must stay unique.
    pub fn extend(&mut self, other: GraphFeatureVector) {
        for (n, v) in other.names.into_iter().zip(other.values) {
            debug_assert!(!self.names.contains(&n), "duplicate graph feature `{n}`");
            self.names.push(n);
            self.values.push(v);
        }
    }
}

/// Loop-free neighbor lists.
fn simple_neighbors(g: &Graph, v: usize) -> impl Iterator<Item = usize> + '_ {
    g.neighbors(v).iter().copied().filter(move |&u| u != v)
}

/// Triangles through `v`, counted as edges among its neighbors.
fn node_triangles(g: &Graph, v: usize) -> usize {
    let nb: Vec<usize> = simple_neighbors(g, v).collect();
    let mut t = 0;
    for (i, &a) in nb.iter().enumerate() {
        for &b in &nb[i + 1..] {
            if g.has_edge(a, b) {
                t += 1;
            }
        }
    }
    t
}

/// Size, density, degree and clustering summary of one graph.
///
/// Self loops count toward `num_edges` and degrees but never toward
/// triangles or wedges.
pub fn graph_stats(g: &Graph) -> GraphFeatureVector {
    let n = g.num_nodes();
    let m = g.num_undirected_edges();
    let nf = n as f64;
    let density = if n > 1 { 2.0 * m as f64 / (nf * (nf - 1.0)) } else { 0.0 };
    let degs = g.degrees();
    let mean_deg = if n > 0 { degs.iter().sum::<usize>() as f64 / nf } else { 0.0 };
    let max_deg = degs.iter().copied().max().unwrap_or(0) as f64;

    let mut clustering_sum = 0.0;
    let mut tri_sum = 0usize;
    let mut wedge_sum = 0usize;
    for v in 0..n {
        let k = simple_neighbors(g, v).count();
        let t = node_triangles(g, v);
        let wedges = k * k.saturating_sub(1) / 2;
        tri_sum += t;
        wedge_sum += wedges;
        if k >= 2 {
            clustering_sum += t as f64 / wedges as f64;
        }
    }
    let avg_clustering = if n > 0 { clustering_sum / nf } else { 0.0 };
    // Σ_v t(v) = 3·triangles, so this is 3·triangles / wedges.
    let transitivity = if wedge_sum > 0 { tri_sum as f64 / wedge_sum as f64 } else { 0.0 };

    let names = ["num_nodes", "num_edges", "density", "mean_degree", "max_degree", "avg_clustering", "transitivity"];
    GraphFeatureVector {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: vec![nf, m as f64, density, mean_deg, max_deg, avg_clustering, transitivity],
    }
}

/// `HEAT_GRID_LEN` points log-spaced over `[1e-2, 1e2]`.
pub fn heat_time_grid() -> Vec<f64> {
    (0..HEAT_GRID_LEN).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / (HEAT_GRID_LEN - 1) as f64)).collect()
}

/// Eigenvalues of `I - D^{-1/2} A D^{-1/2}`; isolated nodes contribute 0.
///
/// Values are clamped to `[0, 2]` so round-off around the zero eigenvalue
/// cannot make the heat trace grow with `t`.
pub fn normalized_laplacian_spectrum(g: &Graph, cap: usize) -> Result<Vec<f64>> {
    let n = g.num_nodes();
    if n > cap {
        return Err(FeatureError::Capacity { n, cap });
    }
    let deg = g.degrees();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for v in 0..n {
        if deg[v] == 0 {
            continue;
        }
        l[(v, v)] = 1.0;
        for &u in g.neighbors(v) {
            l[(v, u)] -= 1.0 / ((deg[v] * deg[u]) as f64).sqrt();
        }
    }
    Ok(symmetric_eigen(l)?.eigenvalues.iter().map(|l| l.clamp(0.0, 2.0)).collect())
}

/// Heat-trace signature `h(t) = Σ exp(-t λ)` over the normalized Laplacian spectrum.
pub fn netlsd_heat(g: &Graph, times: &[f64], cap: usize) -> Result<GraphFeatureVector> {
    let spectrum = normalized_laplacian_spectrum(g, cap)?;
    let values: Vec<f64> = times.iter().map(|&t| spectrum.iter().map(|&l| (-t * l).exp()).sum()).collect();
    Ok(GraphFeatureVector { names: (0..times.len()).map(|i| format!("heat_{i}")).collect(), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).filter(|_| rng.gen::<f64>() < p).collect();
        build_graph(n, &edges, true).unwrap()
    }

    #[test]
    fn triangle_stats() {
        let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)], true).unwrap();
        let s = graph_stats(&g);
        assert_eq!(s.get("avg_clustering"), Some(1.0));
        assert_eq!(s.get("transitivity"), Some(1.0));
        assert_eq!(s.get("density"), Some(1.0));
    }

    #[test]
    fn star_has_no_transitivity() {
        let g = build_graph(4, &[(0, 1), (0, 2), (0, 3)], true).unwrap();
        assert_eq!(graph_stats(&g).get("transitivity"), Some(0.0));
    }

    #[test]
    fn stats_match_brute_force() {
        let g = random_graph(15, 0.3, 21);
        let n = 15;
        let adj = |a: usize, b: usize| a != b && g.has_edge(a, b);
        let mut triangles = 0;
        let mut wedges = 0;
        let mut local = vec![0.0; n];
        for v in 0..n {
            let mut t = 0;
            let mut w = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if adj(v, a) && adj(v, b) {
                        w += 1;
                        if adj(a, b) {
                            t += 1;
                        }
                    }
                }
            }
            if w > 0 {
                local[v] = t as f64 / w as f64;
            }
            wedges += w;
            triangles += t;
        }
        let s = graph_stats(&g);
        assert!((s.get("transitivity").unwrap() - triangles as f64 / wedges as f64).abs() < 1e-12);
        assert!((s.get("avg_clustering").unwrap() - local.iter().sum::<f64>() / n as f64).abs() < 1e-12);
        let m = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).filter(|&(a, b)| adj(a, b)).count();
        assert_eq!(s.get("num_edges"), Some(m as f64));
        assert!((s.get("density").unwrap() - m as f64 / 105.0).abs() < 1e-12);
    }

    #[test]
    fn heat_single_node_is_one() {
        let h = netlsd_heat(&Graph::empty(1), &heat_time_grid(), DEFAULT_DENSE_EIGEN_CAP).unwrap();
        assert_eq!(h.len(), 250);
        assert!(h.values.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn heat_k2_analytic() {
        let g = build_graph(2, &[(0, 1)], true).unwrap();
        let grid = heat_time_grid();
        let h = netlsd_heat(&g, &grid, DEFAULT_DENSE_EIGEN_CAP).unwrap();
        for (t, v) in grid.iter().zip(&h.values) {
            assert!((v - (1.0 + (-2.0 * t).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn heat_decreasing_on_connected_graph() {
        let g = build_graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], true).unwrap();
        let h = netlsd_heat(&g, &heat_time_grid(), DEFAULT_DENSE_EIGEN_CAP).unwrap();
        // the gap to the limit falls below one ulp for large t
        let grid = heat_time_grid();
        for (i, w) in h.values.windows(2).enumerate() {
            assert!(w[1] <= w[0]);
            if grid[i + 1] <= 10.0 {
                assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn heat_cap_enforced() {
        assert!(matches!(
            netlsd_heat(&Graph::empty(10), &heat_time_grid(), 5),
            Err(FeatureError::Capacity { n: 10, cap: 5 })
        ));
    }

    #[test]
    fn grid_endpoints() {
        let g = heat_time_grid();
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert!((g[249] - 1e2).abs() < 1e-10);
    }
}
