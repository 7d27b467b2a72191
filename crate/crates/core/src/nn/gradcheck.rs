//! Central-difference gradient checking.
//!
//! The checked scalar is `Σ out ⊙ R` for a fixed pseudo-random `R`, so every
//! output entry contributes with a distinct weight. The closure gets a freshly
//! seeded generator on each evaluation, which keeps dropout masks identical
//! between the analytic pass and every perturbed pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::models::ParamVars;
use super::params::ModelParams;
use super::tape::{Tape, Var};
use super::Result;
use crate::matrix::Matrix;

pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Magnitudes below this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-3;
const CLOSURE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat entry index) of the worst entry.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

fn weights(rows: usize, cols: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn scalar<F>(inputs: &[Matrix], f: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var], &mut ChaCha8Rng) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(CLOSURE_SEED);
    let out = f(&mut tape, &vars, &mut rng)?;
    let (r, c) = tape.shape(out);
    let w = tape.leaf(weights(r, c));
    let prod = tape.mul(out, w)?;
    let s = tape.sum(prod);
    Ok((tape, vars, s))
}

/// Compares analytic and central-difference gradients for every entry of every input.
pub fn gradcheck<F>(inputs: &[Matrix], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var], &mut ChaCha8Rng) -> Result<Var>,
{
    let (tape, vars, s) = scalar(inputs, &f)?;
    let grads = tape.backward(s);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: (0, 0), entries_checked: 0 };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].rows, inputs[i].cols);
        for j in 0..inputs[i].data.len() {
            let orig = work[i].data[j];
            work[i].data[j] = orig + GRADCHECK_H;
            let (t1, _, s1) = scalar(&work, &f)?;
            work[i].data[j] = orig - GRADCHECK_H;
            let (t2, _, s2) = scalar(&work, &f)?;
            work[i].data[j] = orig;
            let numeric = (t1.value(s1).data[0] - t2.value(s2).data[0]) / (2.0 * GRADCHECK_H);
            let a = analytic.data[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if err > report.max_rel_err || !err.is_finite() {
                report.max_rel_err = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = (i, j);
            }
            report.entries_checked += 1;
        }
    }
    Ok(report)
}

/// Gradient check over every tensor of a parameter set.
pub fn gradcheck_params<F>(params: &ModelParams, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamVars, &mut ChaCha8Rng) -> Result<Var>,
{
    let names: Vec<String> = params.tensors.keys().cloned().collect();
    let inputs: Vec<Matrix> = params.tensors.values().cloned().collect();
    gradcheck(&inputs, |tape, vars, rng| {
        let pv = ParamVars(names.iter().cloned().zip(vars.iter().copied()).collect());
        f(tape, &pv, rng)
    })
}

fn random_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    // keep entries away from the kinks of relu-like primitives
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect(),
    )
}

/// Gradient check of every tape primitive on small random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use std::sync::Arc;

    use crate::graph::SparseMatrix;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |rows, cols| random_input(rows, cols, &mut rng);
    let a = r(3, 4);
    let b = r(3, 4);
    let sparse = Arc::new(SparseMatrix::from_dense(3, 3, &[0.5, 0.0, 1.0, 0.0, 2.0, 0.0, -1.0, 0.0, 0.3]));
    let mut out = Vec::new();
    macro_rules! check {
        ($name:expr, [$($m:expr),*], $f:expr) => {
            out.push(($name, gradcheck(&[$($m.clone()),*], $f)?));
        };
    }
    check!("matmul", [a, r(4, 2)], |t, v, _| t.matmul(v[0], v[1]));
    check!("spmm", [a], |t, v, _| t.spmm(sparse.clone(), v[0]));
    check!("add", [a, b], |t, v, _| t.add(v[0], v[1]));
    check!("sub", [a, b], |t, v, _| t.sub(v[0], v[1]));
    check!("mul", [a, b], |t, v, _| t.mul(v[0], v[1]));
    check!("add_bias", [a, r(1, 4)], |t, v, _| t.add_bias(v[0], v[1]));
    check!("mul_col", [a, r(3, 1)], |t, v, _| t.mul_col(v[0], v[1]));
    check!("scalar_mul", [r(1, 1), a], |t, v, _| t.scalar_mul(v[0], v[1]));
    check!("scale", [a], |t, v, _| Ok(t.scale(v[0], -1.7)));
    check!("add_const", [a], |t, v, _| Ok(t.add_const(v[0], 0.4)));
    check!("relu", [a], |t, v, _| Ok(t.relu(v[0])));
    check!("leaky_relu", [a], |t, v, _| Ok(t.leaky_relu(v[0], 0.2)));
    check!("elu", [a], |t, v, _| Ok(t.elu(v[0])));
    check!("tanh", [a], |t, v, _| Ok(t.tanh(v[0])));
    check!("exp", [a], |t, v, _| Ok(t.exp(v[0])));
    let pos = Matrix { data: a.data.iter().map(|x| x.abs() + 0.5).collect(), ..a.clone() };
    check!("log", [pos], |t, v, _| Ok(t.log(v[0])));
    check!("concat", [a, r(3, 2)], |t, v, _| t.concat(&[v[0], v[1]]));
    check!("slice_cols", [a], |t, v, _| t.slice_cols(v[0], 1, 2));
    check!("transpose", [a], |t, v, _| Ok(t.transpose(v[0])));
    check!("gather", [a], |t, v, _| t.gather(v[0], Arc::new(vec![2, 0, 0, 1])));
    let seg = Arc::new(vec![0, 0, 1]);
    check!("segment_sum", [a], |t, v, _| t.segment_sum(v[0], seg.clone(), 3));
    check!("segment_mean", [a], |t, v, _| t.segment_mean(v[0], seg.clone(), 3));
    check!("segment_max", [a], |t, v, _| t.segment_max(v[0], seg.clone(), 3));
    check!("segment_softmax", [r(5, 2)], |t, v, _| t.segment_softmax(v[0], Arc::new(vec![0, 1, 0, 1, 1]), 2));
    check!("dropout", [a], |t, v, rng| Ok(t.dropout(v[0], 0.5, true, rng)));
    check!("row_l2_normalize", [a], |t, v, _| Ok(t.row_l2_normalize(v[0])));
    check!("sum", [a], |t, v, _| Ok(t.sum(v[0])));
    check!("softmax_cross_entropy", [a], |t, v, _| t.softmax_cross_entropy(v[0], Arc::new(vec![1, 3, 0]), Arc::new(vec![0, 2])));
    Ok(out)
}

/// End-to-end loss gradient check for each model family on a 6-node fixture.
pub fn model_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use std::sync::Arc;

    use super::models::{forward_graph, forward_node, GraphBatch, NodeContext};
    use super::spec::{Activation, Family, ModelSpec};
    use crate::graph::build_graph;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = build_graph(6, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5)], true)?;
    let x = random_input(6, 3, &mut rng);
    let mut sparse_x = Matrix::zeros(6, 5);
    for v in 0..6 {
        sparse_x.set(v, v % 5, 1.0);
    }
    let labels = Arc::new(vec![0, 1, 0, 1, 1, 0]);
    let rows = Arc::new(vec![0, 1, 3, 5]);
    let mut out = Vec::new();

    let node_cases: [(&'static str, Family, &Matrix); 4] =
        [("gcn", Family::Gcn, &x), ("gcn_sparse_input", Family::Gcn, &sparse_x), ("gat", Family::Gat, &x), ("sage", Family::Sage, &x)];
    for (name, family, feats) in node_cases {
        let spec = ModelSpec { hidden_dim: 3, heads: 2, dropout: 0.3, activation: Activation::Elu, ..ModelSpec::default_for(family, feats.cols, 2) };
        let ctx = NodeContext::new(&g, feats)?;
        let params = ModelParams::init(&spec, &mut rng);
        let report = gradcheck_params(&params, |t, pv, rng| {
            let z = forward_node(t, &spec, pv, &ctx, true, rng)?;
            t.softmax_cross_entropy(z, labels.clone(), rows.clone())
        })?;
        out.push((name, report));
    }

    let g2 = build_graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], true)?;
    let x2 = random_input(4, 3, &mut rng);
    let batch = GraphBatch::new(&[&g, &g2], &[&x, &x2])?;
    let graph_labels = Arc::new(vec![1, 0]);
    let all = Arc::new(vec![0, 1]);
    for (name, family) in [("gin", Family::Gin), ("topk_pool", Family::TopkPool)] {
        let spec = ModelSpec {
            num_layers: 2,
            hidden_dim: 4,
            dropout: 0.3,
            activation: Activation::Tanh,
            eps_learnable: true,
            pool_ratio: 0.6,
            ..ModelSpec::default_for(family, 3, 2)
        };
        let params = ModelParams::init(&spec, &mut rng);
        let report = gradcheck_params(&params, |t, pv, rng| {
            let z = forward_graph(t, &spec, pv, &batch, true, rng)?;
            t.softmax_cross_entropy(z, graph_labels.clone(), all.clone())
        })?;
        out.push((name, report));
    }
    Ok(out)
}
