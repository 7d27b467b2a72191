use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Result};

/// Real-valued CSR matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Binary adjacency matrix of `g`.
    pub fn adjacency(g: &Graph) -> Self {
        Self {
            rows: g.num_nodes(),
            cols: g.num_nodes(),
            row_offsets: g.row_offsets().to_vec(),
            col_indices: g.col_indices().to_vec(),
            values: vec![1.0; g.num_entries()],
        }
    }

    /// Keeps the nonzero entries of a row-major dense matrix.
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        let mut row_offsets = Vec::with_capacity(rows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for r in 0..rows {
            for (c, &x) in data[r * cols..(r + 1) * cols].iter().enumerate() {
                if x != 0.0 {
                    col_indices.push(c);
                    values.push(x);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self { rows, cols, row_offsets, col_indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[r * self.cols + c] += v;
            }
        }
        out
    }

    /// `self · B` for a row-major dense `B` with `b_cols` columns.
    pub fn matmul_dense(&self, b: &[f64], b_cols: usize) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.cols * b_cols);
        let mut out = vec![0.0; self.rows * b_cols];
        for r in 0..self.rows {
            let dst = &mut out[r * b_cols..(r + 1) * b_cols];
            for (c, v) in self.row(r) {
                let src = &b[c * b_cols..(c + 1) * b_cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// `selfᵀ · B` for a row-major dense `B` with `b_cols` columns.
    pub fn transpose_matmul_dense(&self, b: &[f64], b_cols: usize) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.rows * b_cols);
        let mut out = vec![0.0; self.cols * b_cols];
        for r in 0..self.rows {
            let src = &b[r * b_cols..(r + 1) * b_cols];
            for (c, v) in self.row(r) {
                let dst = &mut out[c * b_cols..(c + 1) * b_cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        }
        out
    }

    /// Copy with each stored value kept with probability `1 - p` and rescaled.
    pub fn dropout<R: rand::Rng>(&self, p: f64, rng: &mut R) -> Self {
        let mut out = self.clone();
        if p > 0.0 {
            let scale = 1.0 / (1.0 - p);
            for v in &mut out.values {
                *v = if rng.gen::<f64>() < p { 0.0 } else { *v * scale };
            }
        }
        out
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` with degrees counted after adding self loops.
///
/// Existing self loops are not doubled. With `add_self_loops == false`
/// the matrix is `D^{-1/2} A D^{-1/2}` and zero-degree nodes are an error.
pub fn normalized_adjacency(g: &Graph, add_self_loops: bool) -> Result<SparseMatrix> {
    if !g.is_undirected() {
        return Err(GraphError::Directed);
    }
    let n = g.num_nodes();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(g.num_entries() + n);
    row_offsets.push(0);
    for v in 0..n {
        let nb = g.neighbors(v);
        if add_self_loops && nb.binary_search(&v).is_err() {
            let pos = nb.partition_point(|&u| u < v);
            col_indices.extend_from_slice(&nb[..pos]);
            col_indices.push(v);
            col_indices.extend_from_slice(&nb[pos..]);
        } else {
            col_indices.extend_from_slice(nb);
        }
        row_offsets.push(col_indices.len());
    }
    let deg: Vec<f64> = (0..n).map(|v| (row_offsets[v + 1] - row_offsets[v]) as f64).collect();
    if let Some(v) = deg.iter().position(|&d| d == 0.0) {
        return Err(GraphError::ZeroDegree(v));
    }
    let mut values = Vec::with_capacity(col_indices.len());
    for v in 0..n {
        for &u in &col_indices[row_offsets[v]..row_offsets[v + 1]] {
            values.push(1.0 / (deg[v] * deg[u]).sqrt());
        }
    }
    Ok(SparseMatrix { rows: n, cols: n, row_offsets, col_indices, values })
}

/// Neighbor-mean operator: row `v` averages over `N(v)`; isolated rows are zero.
pub fn row_normalized_adjacency(g: &Graph) -> SparseMatrix {
    let mut m = SparseMatrix::adjacency(g);
    for v in 0..g.num_nodes() {
        let d = g.degree(v);
        if d > 0 {
            for x in &mut m.values[m.row_offsets[v]..m.row_offsets[v + 1]] {
                *x = 1.0 / d as f64;
            }
        }
    }
    m
}
