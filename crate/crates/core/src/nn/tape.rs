//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Tape`] records every value produced in a forward pass together with
//! the operation that made it; [`Tape::backward`] walks the record in reverse.

use std::sync::Arc;

use rand::Rng;

use super::linalg::gemm;
use super::{NnError, Result};
use crate::graph::SparseMatrix;
use crate::matrix::Matrix;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulCol(Var, Var),
    ScalarMul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Transpose(Var),
    Gather(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    SegmentMean(Var, Arc<Vec<usize>>, Vec<f64>),
    /// Winning row per output entry, `usize::MAX` for empty segments.
    SegmentMax(Var, Vec<usize>),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
    Dropout(Var, Vec<f64>),
    RowL2Normalize(Var, Vec<f64>),
    Sum(Var),
    /// Logits, labels, rows, softmax probabilities.
    SoftmaxXent(Var, Arc<Vec<usize>>, Arc<Vec<usize>>, Matrix),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients(Vec<Option<Matrix>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled with the given shape when `v` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.rows, m.cols)
}

fn shape_err(op: &'static str, detail: String) -> NnError {
    NnError::Shape { op, detail }
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    Matrix { rows: m.rows, cols: m.cols, data: m.data.iter().map(|&x| f(x)).collect() }
}

fn zip(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix { rows: a.rows, cols: a.cols, data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn check_index(op: &'static str, idx: &[usize], bound: usize) -> Result<()> {
    match idx.iter().find(|&&i| i >= bound) {
        Some(&i) => Err(shape_err(op, format!("index {i} out of range for {bound} rows"))),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape_of_index(&self, i: usize) -> (usize, usize) {
        shape(&self.nodes[i].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape(self.value(v))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(shape_err("matmul", format!("{:?} x {:?}", shape(x), shape(y))));
        }
        let out = gemm(x, false, y, false);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Constant sparse matrix times a variable.
    pub fn spmm(&mut self, s: Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let y = self.value(b);
        if s.cols != y.rows {
            return Err(shape_err("spmm", format!("sparse {}x{} x {:?}", s.rows, s.cols, shape(y))));
        }
        let out = Matrix::from_vec(s.rows, y.cols, s.matmul_dense(&y.data, y.cols));
        Ok(self.push(out, Op::SpMM(s, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.shape(a), self.shape(b));
        if x != y {
            return Err(shape_err(op, format!("{x:?} vs {y:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a `1 × d` row to every row of an `n × d` value.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows != 1 || b.cols != x.cols {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", shape(x), shape(b))));
        }
        let mut out = x.clone();
        for r in 0..out.rows {
            out.row_mut(r).iter_mut().zip(&b.data).for_each(|(o, v)| *o += v);
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    /// Scales row `i` of `a` by `c[i]` for an `n × 1` column `c`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (x, s) = (self.value(a), self.value(c));
        if s.cols != 1 || s.rows != x.rows {
            return Err(shape_err("mul_col", format!("{:?} * {:?}", shape(x), shape(s))));
        }
        let mut out = x.clone();
        for r in 0..out.rows {
            let k = s.data[r];
            out.row_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        Ok(self.push(out, Op::MulCol(a, c)))
    }

    /// Multiplies by a `1 × 1` variable.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var> {
        let k = self.value(s);
        if shape(k) != (1, 1) {
            return Err(shape_err("scalar_mul", format!("scalar operand {:?}", shape(k))));
        }
        let k = k.data[0];
        let out = map(self.value(a), |x| k * x);
        Ok(self.push(out, Op::ScalarMul(s, a)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = map(self.value(a), |x| k * x);
        self.push(out, Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let out = map(self.value(a), |x| x + k);
        self.push(out, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let out = map(self.value(a), |x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(out, Op::Elu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = map(self.value(a), f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat", "no operands".into()));
        };
        let rows = self.value(first).rows;
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows != rows) {
            return Err(shape_err("concat", format!("row counts {rows} and {}", self.value(bad).rows)));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols {
            return Err(shape_err("slice_cols", format!("columns {start}..{} of {:?}", start + len, shape(x))));
        }
        let out = x.select_columns(&(start..start + len).collect::<Vec<_>>());
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Matrix::zeros(x.cols, x.rows);
        for r in 0..x.rows {
            for c in 0..x.cols {
                out.set(c, r, x.get(r, c));
            }
        }
        self.push(out, Op::Transpose(a))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        check_index("gather", &idx, x.rows)?;
        let out = x.select_rows(&idx);
        Ok(self.push(out, Op::Gather(a, idx)))
    }

    fn check_segments(&self, op: &'static str, a: Var, seg: &[usize], n: usize) -> Result<()> {
        let x = self.value(a);
        if seg.len() != x.rows {
            return Err(shape_err(op, format!("{} segment ids for {:?}", seg.len(), shape(x))));
        }
        check_index(op, seg, n)
    }

    fn segment_sum_raw(x: &Matrix, seg: &[usize], n: usize) -> Matrix {
        let mut out = Matrix::zeros(n, x.cols);
        for (r, &s) in seg.iter().enumerate() {
            out.row_mut(s).iter_mut().zip(x.row(r)).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Sums rows sharing a segment id into `n` output rows.
    pub fn segment_sum(&mut self, a: Var, seg: Arc<Vec<usize>>, n: usize) -> Result<Var> {
        self.check_segments("segment_sum", a, &seg, n)?;
        let out = Self::segment_sum_raw(self.value(a), &seg, n);
        Ok(self.push(out, Op::SegmentSum(a, seg)))
    }

    /// Per-segment mean; empty segments yield zero rows.
    pub fn segment_mean(&mut self, a: Var, seg: Arc<Vec<usize>>, n: usize) -> Result<Var> {
        self.check_segments("segment_mean", a, &seg, n)?;
        let mut counts = vec![0.0; n];
        for &s in seg.iter() {
            counts[s] += 1.0;
        }
        let inv: Vec<f64> = counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let mut out = Self::segment_sum_raw(self.value(a), &seg, n);
        for (r, k) in inv.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|o| *o *= k);
        }
        Ok(self.push(out, Op::SegmentMean(a, seg, inv)))
    }

    /// Per-segment, per-column maximum; the first maximal row wins ties and
    /// empty segments yield zeros.
    pub fn segment_max(&mut self, a: Var, seg: Arc<Vec<usize>>, n: usize) -> Result<Var> {
        self.check_segments("segment_max", a, &seg, n)?;
        let x = self.value(a);
        let d = x.cols;
        let mut out = Matrix::zeros(n, d);
        let mut arg = vec![usize::MAX; n * d];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..d {
                let v = x.get(r, c);
                let k = s * d + c;
                if arg[k] == usize::MAX || v > out.data[k] {
                    out.data[k] = v;
                    arg[k] = r;
                }
            }
        }
        Ok(self.push(out, Op::SegmentMax(a, arg)))
    }

    /// Softmax over the rows of each segment, independently per column.
    pub fn segment_softmax(&mut self, a: Var, seg: Arc<Vec<usize>>, n: usize) -> Result<Var> {
        self.check_segments("segment_softmax", a, &seg, n)?;
        let x = self.value(a);
        let d = x.cols;
        let mut mx = vec![f64::NEG_INFINITY; n * d];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..d {
                mx[s * d + c] = mx[s * d + c].max(x.get(r, c));
            }
        }
        let mut out = Matrix::zeros(x.rows, d);
        let mut den = vec![0.0; n * d];
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..d {
                let e = (x.get(r, c) - mx[s * d + c]).exp();
                out.set(r, c, e);
                den[s * d + c] += e;
            }
        }
        for (r, &s) in seg.iter().enumerate() {
            for c in 0..d {
                out.set(r, c, out.get(r, c) / den[s * d + c]);
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(a, seg, n)))
    }

    /// Inverted dropout; identity when `!training` or `p == 0`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Var {
        if !training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(a);
        let mask: Vec<f64> = (0..x.data.len()).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let out = Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().zip(&mask).map(|(v, m)| v * m).collect() };
        self.push(out, Op::Dropout(a, mask))
    }

    /// Divides each row by `max(‖row‖₂, 1e-12)`.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let nrm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            out.row_mut(r).iter_mut().for_each(|v| *v /= nrm);
            norms.push(nrm);
        }
        self.push(out, Op::RowL2Normalize(a, norms))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Mean softmax cross-entropy over `rows` of the logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>, rows: Arc<Vec<usize>>) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.rows {
            return Err(shape_err("softmax_cross_entropy", format!("{} labels for {:?}", labels.len(), shape(z))));
        }
        check_index("softmax_cross_entropy", &rows, z.rows)?;
        if rows.is_empty() {
            return Err(shape_err("softmax_cross_entropy", "empty row set".into()));
        }
        if let Some(&bad) = rows.iter().map(|&r| &labels[r]).find(|&&l| l >= z.cols) {
            return Err(shape_err("softmax_cross_entropy", format!("label {bad} for {} classes", z.cols)));
        }
        let p = crate::matrix::softmax_rows(z);
        let mut loss = 0.0;
        for &r in rows.iter() {
            // log-sum-exp form keeps extreme logits finite
            let row = z.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[labels[r]];
        }
        loss /= rows.len() as f64;
        Ok(self.push(Matrix::from_vec(1, 1, vec![loss]), Op::SoftmaxXent(logits, labels, rows, p)))
    }

    /// Gradients of the sum of `loss`'s entries with respect to every
    /// recorded value.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let l = self.value(loss);
        grads[loss.0] = Some(Matrix::from_vec(l.rows, l.cols, vec![1.0; l.data.len()]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, *a, gemm(&g, false, self.value(*b), true));
                    accumulate(&mut grads, *b, gemm(self.value(*a), true, &g, false));
                }
                Op::SpMM(s, b) => {
                    let d = Matrix::from_vec(s.cols, g.cols, s.transpose_matmul_dense(&g.data, g.cols));
                    accumulate(&mut grads, *b, d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, map(&g, |v| -v));
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, zip(&g, self.value(*b), |u, v| u * v));
                    accumulate(&mut grads, *b, zip(&g, self.value(*a), |u, v| u * v));
                }
                Op::AddBias(a, b) => {
                    let mut db = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        db.data.iter_mut().zip(g.row(r)).for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, db);
                }
                Op::MulCol(a, c) => {
                    let (x, s) = (self.value(*a), self.value(*c));
                    let mut da = g.clone();
                    let mut dc = Matrix::zeros(s.rows, 1);
                    for r in 0..g.rows {
                        let k = s.data[r];
                        da.row_mut(r).iter_mut().for_each(|v| *v *= k);
                        dc.data[r] = g.row(r).iter().zip(x.row(r)).map(|(u, v)| u * v).sum();
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *c, dc);
                }
                Op::ScalarMul(s, a) => {
                    let k = self.value(*s).data[0];
                    let ds: f64 = g.data.iter().zip(&self.value(*a).data).map(|(u, v)| u * v).sum();
                    accumulate(&mut grads, *s, Matrix::from_vec(1, 1, vec![ds]));
                    accumulate(&mut grads, *a, map(&g, |v| k * v));
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, map(&g, |v| k * v)),
                Op::AddConst(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Relu(a) => accumulate(&mut grads, *a, zip(&g, self.value(*a), |u, x| if x > 0.0 { u } else { 0.0 })),
                Op::LeakyRelu(a, s) => {
                    accumulate(&mut grads, *a, zip(&g, self.value(*a), |u, x| if x > 0.0 { u } else { s * u }))
                }
                Op::Elu(a) => {
                    let d = Matrix {
                        rows: g.rows,
                        cols: g.cols,
                        data: g
                            .data
                            .iter()
                            .zip(&self.value(*a).data)
                            .zip(&y.data)
                            .map(|((u, x), o)| if *x > 0.0 { *u } else { u * (o + 1.0) })
                            .collect(),
                    };
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => accumulate(&mut grads, *a, zip(&g, y, |u, o| u * (1.0 - o * o))),
                Op::Exp(a) => accumulate(&mut grads, *a, zip(&g, y, |u, o| u * o)),
                Op::Log(a) => accumulate(&mut grads, *a, zip(&g, self.value(*a), |u, x| u / x)),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let d = g.select_columns(&(off..off + w).collect::<Vec<_>>());
                        accumulate(&mut grads, p, d);
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows, x.cols);
                    for r in 0..g.rows {
                        d.row_mut(r)[*start..start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Transpose(a) => {
                    let mut d = Matrix::zeros(g.cols, g.rows);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            d.set(c, r, g.get(r, c));
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Gather(a, idx) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, Self::segment_sum_raw(&g, idx, x.rows));
                }
                Op::SegmentSum(a, seg) => accumulate(&mut grads, *a, g.select_rows(seg)),
                Op::SegmentMean(a, seg, inv) => {
                    let mut d = g.select_rows(seg);
                    for (r, &s) in seg.iter().enumerate() {
                        let k = inv[s];
                        d.row_mut(r).iter_mut().for_each(|v| *v *= k);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SegmentMax(a, arg) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows, x.cols);
                    for (k, &r) in arg.iter().enumerate() {
                        if r != usize::MAX {
                            let c = k % x.cols;
                            d.data[r * x.cols + c] += g.data[k];
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SegmentSoftmax(a, seg, n) => {
                    let d = y.cols;
                    let mut dot = vec![0.0; n * d];
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..d {
                            dot[s * d + c] += g.get(r, c) * y.get(r, c);
                        }
                    }
                    let mut dx = Matrix::zeros(y.rows, d);
                    for (r, &s) in seg.iter().enumerate() {
                        for c in 0..d {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot[s * d + c]));
                        }
                    }
                    accumulate(&mut grads, *a, dx);
                }
                Op::Dropout(a, mask) => {
                    let d = Matrix { rows: g.rows, cols: g.cols, data: g.data.iter().zip(mask).map(|(u, m)| u * m).collect() };
                    accumulate(&mut grads, *a, d);
                }
                Op::RowL2Normalize(a, norms) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let nrm = norms[r];
                        if nrm <= 1e-12 {
                            d.row_mut(r).iter_mut().zip(g.row(r)).for_each(|(o, u)| *o = u / 1e-12);
                            continue;
                        }
                        let yr = y.row(r);
                        let proj: f64 = yr.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..x.cols {
                            d.set(r, c, (g.get(r, c) - yr[c] * proj) / nrm);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, Matrix::from_vec(x.rows, x.cols, vec![g.data[0]; x.data.len()]));
                }
                Op::SoftmaxXent(z, labels, rows, p) => {
                    let k = g.data[0] / rows.len() as f64;
                    let mut d = Matrix::zeros(p.rows, p.cols);
                    for &r in rows.iter() {
                        for c in 0..p.cols {
                            d.set(r, c, k * p.get(r, c));
                        }
                        let v = d.get(r, labels[r]) - k;
                        d.set(r, labels[r], v);
                    }
                    accumulate(&mut grads, *z, d);
                }
            }
            grads[i] = Some(g);
        }
        Gradients(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut t = Tape::new();
        let i = t.leaf(Matrix::identity(3));
        let x = t.leaf(Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), t.value(x));
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.get(x).unwrap().data, vec![1.0; 6]);
    }

    #[test]
    fn segment_sum_example() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]));
        let y = t.segment_sum(x, Arc::new(vec![0, 0, 1]), 2).unwrap();
        assert_eq!(t.value(y).data, vec![3.0, 3.0]);
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        for c in [2usize, 3, 7] {
            let mut t = Tape::new();
            let z = t.leaf(Matrix::zeros(4, c));
            let l = t.softmax_cross_entropy(z, Arc::new(vec![0, 1 % c, 0, 0]), Arc::new(vec![0, 1, 2, 3])).unwrap();
            assert!((t.value(l).data[0] - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors_name_op() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 3));
        match t.matmul(a, b) {
            Err(NnError::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("(2, 3)"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(t.add_bias(a, b).is_err());
        assert!(t.segment_sum(a, Arc::new(vec![0]), 1).is_err());
    }

    #[test]
    fn dropout_identity_cases() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new();
        let a = t.leaf(Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        assert_eq!(t.dropout(a, 0.5, false, &mut rng), a);
        assert_eq!(t.dropout(a, 0.0, true, &mut rng), a);
        let d = t.dropout(a, 0.5, true, &mut rng);
        assert!(t.value(d).data.iter().zip(&[1.0, 2.0, 3.0]).all(|(o, x)| *o == 0.0 || *o == 2.0 * x));
    }

    #[test]
    fn segment_max_and_empty_segment() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_vec(3, 2, vec![1.0, 5.0, 4.0, 2.0, 0.0, 0.0]));
        let y = t.segment_max(x, Arc::new(vec![0, 0, 2]), 3).unwrap();
        assert_eq!(t.value(y).data, vec![4.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.get(x).unwrap().data, vec![0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }
}
