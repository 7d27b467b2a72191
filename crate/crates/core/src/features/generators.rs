//! Node-feature generators. Each is a pure function of the graph (and, for
//! normalization, the incoming features).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{FeatureError, Result};
use crate::graph::{normalized_adjacency, Graph};
use crate::matrix::Matrix;

pub const DEFAULT_ONEHOT_ID_CAP: usize = 20_000;

/// Divides each nonzero row by its L1 norm.
pub fn gen_normalize(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Identity features, refused above `cap` nodes.
pub fn gen_onehot_id(g: &Graph, cap: usize) -> Result<Matrix> {
    let n = g.num_nodes();
    if n > cap {
        return Err(FeatureError::Capacity { n, cap });
    }
    Ok(Matrix::identity(n))
}

/// One-hot of `min(deg(v), max_degree)`.
pub fn gen_onehot_degree(g: &Graph, max_degree: usize) -> Matrix {
    let mut m = Matrix::zeros(g.num_nodes(), max_degree + 1);
    for v in 0..g.num_nodes() {
        m.set(v, g.degree(v).min(max_degree), 1.0);
    }
    m
}

/// `[deg, min, max, mean, std]` of neighbor degrees (population std).
pub fn gen_ldp(g: &Graph) -> Matrix {
    let deg = g.degrees();
    let mut m = Matrix::zeros(g.num_nodes(), 5);
    for v in 0..g.num_nodes() {
        let row = m.row_mut(v);
        row[0] = deg[v] as f64;
        let nb = g.neighbors(v);
        if nb.is_empty() {
            continue;
        }
        let ds: Vec<f64> = nb.iter().map(|&u| deg[u] as f64).collect();
        let k = ds.len() as f64;
        let mean = ds.iter().sum::<f64>() / k;
        let var = ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / k;
        row[1] = ds.iter().copied().fold(f64::INFINITY, f64::min);
        row[2] = ds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row[3] = mean;
        row[4] = var.sqrt();
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageRankParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankParams {
    fn default() -> Self {
        Self { damping: 0.85, tol: 1e-10, max_iter: 1000 }
    }
}

/// Power iteration on the uniform-teleport random walk.
///
/// Nodes without neighbors spread their mass uniformly. Stops when the L1
/// change between iterates drops below `tol`.
pub fn gen_pagerank(g: &Graph, p: PageRankParams) -> Result<Matrix> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(FeatureError::InvalidParam { step: "pagerank".into(), msg: "empty graph".into() });
    }
    let nf = n as f64;
    let deg = g.degrees();
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..p.max_iter {
        let dangling: f64 = (0..n).filter(|&v| deg[v] == 0).map(|v| x[v]).sum();
        let base = p.damping * dangling / nf + (1.0 - p.damping) / nf;
        next.iter_mut().for_each(|y| *y = base);
        for v in 0..n {
            if deg[v] > 0 {
                let share = p.damping * x[v] / deg[v] as f64;
                for &u in g.neighbors(v) {
                    next[u] += share;
                }
            }
        }
        residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < p.tol {
            return Ok(Matrix::from_vec(n, 1, x));
        }
    }
    Err(FeatureError::NonConvergence { residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSource {
    #[default]
    Adjacency,
    NormalizedAdjacency,
}

pub const DEFAULT_EIGEN_K: usize = 32;

fn dense_source(g: &Graph, source: EigenSource) -> Result<DMatrix<f64>> {
    let n = g.num_nodes();
    let mut a = DMatrix::<f64>::zeros(n, n);
    match source {
        EigenSource::Adjacency => {
            for v in 0..n {
                for &u in g.neighbors(v) {
                    a[(v, u)] = 1.0;
                }
            }
        }
        EigenSource::NormalizedAdjacency => {
            let s = normalized_adjacency(g, true)?;
            for v in 0..n {
                for (u, w) in s.row(v) {
                    a[(v, u)] = w;
                }
            }
        }
    }
    Ok(a)
}

/// Eigen-decomposition of a symmetric matrix with an iteration cap.
pub(crate) fn symmetric_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, f64::EPSILON, 10_000).ok_or(FeatureError::EigenFailed)
}

/// The `min(k, n)` eigenvectors with largest `|λ|`, as columns.
///
/// Columns are ordered by descending `|λ|` (positive `λ` first on ties) and
/// signed so that the first entry of largest magnitude is positive.
pub fn gen_eigen(g: &Graph, k: usize, source: EigenSource) -> Result<(Matrix, Vec<f64>)> {
    let n = g.num_nodes();
    let kk = k.min(n);
    if kk == 0 {
        return Ok((Matrix::zeros(n, 0), Vec::new()));
    }
    let eig = symmetric_eigen(dense_source(g, source)?)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (eig.eigenvalues[i], eig.eigenvalues[j]);
        if (a.abs() - b.abs()).abs() > 1e-9 {
            b.abs().total_cmp(&a.abs())
        } else {
            b.total_cmp(&a).then(i.cmp(&j))
        }
    });
    let mut out = Matrix::zeros(n, kk);
    let mut values = Vec::with_capacity(kk);
    for (c, &i) in order.iter().take(kk).enumerate() {
        let col = eig.eigenvectors.column(i);
        let max = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let lead = col.iter().position(|v| v.abs() >= max - 1e-9).unwrap_or(0);
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            out.set(r, c, sign * col[r]);
        }
        values.push(eig.eigenvalues[i]);
    }
    Ok((out, values))
}
