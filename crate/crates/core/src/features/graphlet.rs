//! Per-node counts of small connected induced subgraphs.
//!
//! Subgraphs are enumerated once each with the ESU scheme (every connected
//! vertex set is grown from its smallest member), then every member node is
//! credited once for the subgraph's isomorphism class.

use super::{FeatureError, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;

pub const DEFAULT_GRAPHLET_BUDGET: u64 = 10_000_000;

/// Column layout: size-3 classes first, then the six connected 4-node classes.
pub const GRAPHLET_NAMES: [&str; 8] = ["triangle", "path3", "path4", "star4", "cycle4", "paw", "diamond", "clique4"];

/// Isomorphism class column for a connected induced subgraph.
pub fn classify(g: &Graph, nodes: &[usize]) -> usize {
    let mut edges = 0;
    let mut max_deg = 0;
    for &u in nodes {
        let d = nodes.iter().filter(|&&w| w != u && g.has_edge(u, w)).count();
        edges += d;
        max_deg = max_deg.max(d);
    }
    edges /= 2;
    match (nodes.len(), edges, max_deg) {
        (3, 3, _) => 0,
        (3, 2, _) => 1,
        (4, 3, 2) => 2,
        (4, 3, 3) => 3,
        (4, 4, 2) => 4,
        (4, 4, 3) => 5,
        (4, 5, _) => 6,
        (4, 6, _) => 7,
        _ => unreachable!("disconnected or unsupported subgraph"),
    }
}

struct Esu<'a> {
    g: &'a Graph,
    max_size: usize,
    budget: u64,
    spent: u64,
    counts: Matrix,
}

impl Esu<'_> {
    fn in_closed_neighborhood(&self, sub: &[usize], u: usize) -> bool {
        sub.iter().any(|&s| s == u || self.g.has_edge(s, u))
    }

    fn extend(&mut self, sub: &mut Vec<usize>, mut ext: Vec<usize>, root: usize) -> Result<()> {
        if sub.len() >= 3 {
            let class = classify(self.g, sub);
            for &v in sub.iter() {
                let c = self.counts.get(v, class);
                self.counts.set(v, class, c + 1.0);
            }
        }
        if sub.len() == self.max_size {
            return Ok(());
        }
        while let Some(w) = ext.pop() {
            let mut next = ext.clone();
            for &u in self.g.neighbors(w) {
                if u > root && !self.in_closed_neighborhood(sub, u) && !next.contains(&u) && u != w {
                    next.push(u);
                }
            }
            self.spent += next.len() as u64 + 1;
            if self.spent > self.budget {
                return Err(FeatureError::GraphletBudget { budget: self.budget });
            }
            sub.push(w);
            self.extend(sub, next, root)?;
            sub.pop();
        }
        Ok(())
    }
}

/// Counts graphlets of size 3 (and 4 when `max_size == 4`) touching each node.
///
/// `budget` bounds the candidate extensions explored from any single root.
pub fn gen_graphlet(g: &Graph, max_size: usize, budget: u64) -> Result<Matrix> {
    if !(3..=4).contains(&max_size) {
        return Err(FeatureError::InvalidParam { step: "graphlet".into(), msg: format!("max_size must be 3 or 4, got {max_size}") });
    }
    let cols = if max_size == 3 { 2 } else { 8 };
    let mut esu = Esu { g, max_size, budget, spent: 0, counts: Matrix::zeros(g.num_nodes(), 8) };
    for v in 0..g.num_nodes() {
        esu.spent = 0;
        let ext: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| u > v).collect();
        let mut sub = vec![v];
        esu.extend(&mut sub, ext, v)?;
    }
    Ok(esu.counts.select_columns(&(0..cols).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use proptest::prelude::*;

    fn connected(g: &Graph, nodes: &[usize]) -> bool {
        let mut seen = vec![nodes[0]];
        let mut stack = vec![nodes[0]];
        while let Some(u) = stack.pop() {
            for &w in nodes {
                if !seen.contains(&w) && g.has_edge(u, w) {
                    seen.push(w);
                    stack.push(w);
                }
            }
        }
        seen.len() == nodes.len()
    }

    /// Exhaustive oracle over every vertex subset of size 3..=max_size.
    fn oracle(g: &Graph, max_size: usize) -> Matrix {
        let n = g.num_nodes();
        let mut m = Matrix::zeros(n, 8);
        for mask in 0u32..(1 << n) {
            let nodes: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            if nodes.len() < 3 || nodes.len() > max_size || !connected(g, &nodes) {
                continue;
            }
            // loop-free adjacency count for the class
            let mut edges = 0;
            let mut degs = vec![0; nodes.len()];
            for (i, &a) in nodes.iter().enumerate() {
                for (j, &b) in nodes.iter().enumerate() {
                    if i < j && g.has_edge(a, b) {
                        edges += 1;
                        degs[i] += 1;
                        degs[j] += 1;
                    }
                }
            }
            degs.sort_unstable();
            let class = match (nodes.len(), edges, degs.as_slice()) {
                (3, 3, _) => 0,
                (3, 2, _) => 1,
                (4, 3, [1, 1, 2, 2]) => 2,
                (4, 3, [1, 1, 1, 3]) => 3,
                (4, 4, [2, 2, 2, 2]) => 4,
                (4, 4, [1, 2, 2, 3]) => 5,
                (4, 5, _) => 6,
                (4, 6, _) => 7,
                other => panic!("unexpected {other:?}"),
            };
            for &v in &nodes {
                m.set(v, class, m.get(v, class) + 1.0);
            }
        }
        let cols = if max_size == 3 { 2 } else { 8 };
        m.select_columns(&(0..cols).collect::<Vec<_>>())
    }

    #[test]
    fn triangle_counts() {
        let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)], true).unwrap();
        let m = gen_graphlet(&g, 3, DEFAULT_GRAPHLET_BUDGET).unwrap();
        for v in 0..3 {
            assert_eq!(m.row(v), &[1.0, 0.0]);
        }
    }

    #[test]
    fn path_counts() {
        let g = build_graph(3, &[(0, 1), (1, 2)], true).unwrap();
        let m = gen_graphlet(&g, 3, DEFAULT_GRAPHLET_BUDGET).unwrap();
        for v in 0..3 {
            assert_eq!(m.row(v), &[0.0, 1.0]);
        }
    }

    #[test]
    fn budget_guard() {
        let edges: Vec<(usize, usize)> = (0..30).flat_map(|u| (u + 1..30).map(move |v| (u, v))).collect();
        let g = build_graph(30, &edges, true).unwrap();
        assert!(matches!(gen_graphlet(&g, 4, 1000), Err(FeatureError::GraphletBudget { .. })));
    }

    #[test]
    fn rejects_bad_size() {
        assert!(gen_graphlet(&Graph::empty(3), 5, 10).is_err());
    }

    proptest! {
        #[test]
        fn matches_subset_enumeration(edges in proptest::collection::vec((0usize..10, 0usize..10), 0..25), size in 3usize..=4) {
            let g = build_graph(10, &edges, true).unwrap();
            prop_assert_eq!(gen_graphlet(&g, size, DEFAULT_GRAPHLET_BUDGET).unwrap(), oracle(&g, size));
        }
    }
}
