use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{build_graph, Graph};
use crate::matrix::Matrix;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(17)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn to_dense(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

fn run_node(spec: &ModelSpec, params: &ModelParams, g: &Graph, x: &Matrix, training: bool) -> Matrix {
    let ctx = NodeContext::new(g, x).unwrap();
    let mut t = Tape::new();
    let pv = ParamVars::record(&mut t, params);
    let z = forward_node(&mut t, spec, &pv, &ctx, training, &mut rng()).unwrap();
    t.value(z).clone()
}

fn run_graph(spec: &ModelSpec, params: &ModelParams, graphs: &[&Graph], xs: &[&Matrix]) -> Matrix {
    let b = GraphBatch::new(graphs, xs).unwrap();
    let mut t = Tape::new();
    let pv = ParamVars::record(&mut t, params);
    let z = forward_graph(&mut t, spec, &pv, &b, false, &mut rng()).unwrap();
    t.value(z).clone()
}

fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

fn params_with(pairs: &[(&str, Matrix)]) -> ModelParams {
    ModelParams::from_tensors(pairs.iter().map(|(k, m)| (k.to_string(), m.clone())).collect::<BTreeMap<_, _>>())
}

fn dense_renorm(g: &Graph) -> DMatrix<f64> {
    let n = g.num_nodes();
    let mut a = DMatrix::<f64>::identity(n, n);
    for (u, v) in g.edges() {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]).sqrt())
}

#[test]
fn primitive_gradients_agree() {
    for (name, r) in primitive_suite(1).unwrap() {
        assert!(r.passed(), "{name}: {r:?}");
    }
}

#[test]
fn model_gradients_agree() {
    for (name, r) in model_suite(2).unwrap() {
        assert!(r.passed(), "{name}: {r:?}");
    }
}

#[test]
fn gcn_single_node_identity() {
    let g = build_graph(1, &[(0, 0)], true).unwrap();
    let x = Matrix::from_rows(&[vec![0.3, -2.0]]);
    let spec = ModelSpec { num_layers: 1, dropout: 0.0, ..ModelSpec::default_for(Family::Gcn, 2, 2) };
    let p = params_with(&[("conv0.weight", Matrix::identity(2)), ("conv0.bias", Matrix::zeros(1, 2))]);
    assert_eq!(run_node(&spec, &p, &g, &x, true), x);
}

#[test]
fn gcn_two_layers_match_dense_oracle() {
    let mut r = rng();
    let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)], true).unwrap();
    let x = random(3, 4, &mut r);
    let spec = ModelSpec { hidden_dim: 5, dropout: 0.0, ..ModelSpec::default_for(Family::Gcn, 4, 2) };
    let p = ModelParams::init(&spec, &mut r);
    let a = dense_renorm(&g);
    let w0 = to_dense(&p.tensors["conv0.weight"]);
    let w1 = to_dense(&p.tensors["conv1.weight"]);
    let b0 = to_dense(&p.tensors["conv0.bias"]);
    let b1 = to_dense(&p.tensors["conv1.bias"]);
    let mut h = &a * to_dense(&x) * w0;
    for mut row in h.row_iter_mut() {
        row += &b0;
    }
    h.apply(|v| *v = v.max(0.0));
    let mut out = &a * h * w1;
    for mut row in out.row_iter_mut() {
        row += &b1;
    }
    let got = run_node(&spec, &p, &g, &x, false);
    assert_close(&got, &Matrix::from_vec(3, 2, out.transpose().as_slice().to_vec()), 1e-10);
}

#[test]
fn eval_mode_is_deterministic() {
    let mut r = rng();
    let g = build_graph(5, &[(0, 1), (1, 2), (3, 4)], true).unwrap();
    let x = random(5, 3, &mut r);
    for f in [Family::Gcn, Family::Gat, Family::Sage] {
        let spec = ModelSpec::default_for(f, 3, 2);
        let p = ModelParams::init(&spec, &mut r);
        let a = run_node(&spec, &p, &g, &x, false);
        let b = run_node(&spec, &p, &g, &x, false);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn gat_single_node_identity() {
    let g = Graph::empty(1);
    let x = Matrix::from_rows(&[vec![1.5, -0.5, 2.0]]);
    let spec = ModelSpec { num_layers: 1, dropout: 0.0, ..ModelSpec::default_for(Family::Gat, 3, 3) };
    let p = params_with(&[
        ("conv0.weight", Matrix::identity(3)),
        ("conv0.att_src0", Matrix::zeros(3, 1)),
        ("conv0.att_dst0", Matrix::zeros(3, 1)),
        ("conv0.bias", Matrix::zeros(1, 3)),
    ]);
    assert_eq!(run_node(&spec, &p, &g, &x, false), x);
}

#[test]
fn gat_p2_matches_per_edge_hand_computation() {
    let mut r = rng();
    let g = build_graph(2, &[(0, 1)], true).unwrap();
    let x = random(2, 3, &mut r);
    let spec = ModelSpec { num_layers: 1, dropout: 0.0, ..ModelSpec::default_for(Family::Gat, 3, 2) };
    let p = ModelParams::init(&spec, &mut r);
    let w = to_dense(&p.tensors["conv0.weight"]);
    let a_s = to_dense(&p.tensors["conv0.att_src0"]);
    let a_d = to_dense(&p.tensors["conv0.att_dst0"]);
    let z = to_dense(&x) * w;
    let lrelu = |v: f64| if v > 0.0 { v } else { 0.2 * v };
    let mut want = Matrix::zeros(2, 2);
    for v in 0..2 {
        // neighbors of v in A + I are both nodes
        let e: Vec<f64> = (0..2).map(|u| lrelu((z.row(u) * &a_s)[(0, 0)] + (z.row(v) * &a_d)[(0, 0)])).collect();
        let m = e[0].max(e[1]);
        let den: f64 = e.iter().map(|x| (x - m).exp()).sum();
        for c in 0..2 {
            let s: f64 = (0..2).map(|u| (e[u] - m).exp() / den * z[(u, c)]).sum();
            want.set(v, c, s + p.tensors["conv0.bias"].data[c]);
        }
    }
    assert_close(&run_node(&spec, &p, &g, &x, false), &want, 1e-10);
}

#[test]
fn attention_sums_to_one_per_destination() {
    let mut r = rng();
    for trial in 0..20 {
        let n = 8;
        let edges: Vec<(usize, usize)> = (0..12).map(|_| (r.gen_range(0..n), r.gen_range(0..n))).collect();
        let g = build_graph(n, &edges, true).unwrap();
        let ctx = NodeContext::new(&g, &Matrix::identity(n)).unwrap();
        let mut t = Tape::new();
        let e = t.leaf(random(ctx.att_dst.len(), 1, &mut r));
        let alpha = t.segment_softmax(e, ctx.att_dst.clone(), n).unwrap();
        let mut sums = vec![0.0; n];
        for (i, &d) in ctx.att_dst.iter().enumerate() {
            sums[d] += t.value(alpha).data[i];
        }
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-9), "trial {trial}");
    }
}

#[test]
fn sage_isolated_node_self_part() {
    let g = Graph::empty(1);
    let x = Matrix::from_rows(&[vec![0.4, -1.0]]);
    let spec = ModelSpec { num_layers: 1, dropout: 0.0, ..ModelSpec::default_for(Family::Sage, 2, 2) };
    let p = params_with(&[("conv0.w_self", Matrix::identity(2)), ("conv0.w_neigh", Matrix::zeros(2, 2)), ("conv0.bias", Matrix::zeros(1, 2))]);
    assert_eq!(run_node(&spec, &p, &g, &x, false), x);
}

#[test]
fn sage_hidden_rows_unit_norm_and_dense_oracle() {
    let mut r = rng();
    let g = build_graph(3, &[(0, 1), (1, 2), (0, 2)], true).unwrap();
    let x = random(3, 4, &mut r);
    let spec = ModelSpec { hidden_dim: 5, dropout: 0.0, ..ModelSpec::default_for(Family::Sage, 4, 2) };
    let p = ModelParams::init(&spec, &mut r);
    let mean = DMatrix::from_fn(3, 3, |i, j| if i != j { 0.5 } else { 0.0 });
    let xd = to_dense(&x);
    let layer = |h: &DMatrix<f64>, i: usize| {
        let mut z = h * to_dense(&p.tensors[&format!("conv{i}.w_self")]) + &mean * h * to_dense(&p.tensors[&format!("conv{i}.w_neigh")]);
        let b = to_dense(&p.tensors[&format!("conv{i}.bias")]);
        for mut row in z.row_iter_mut() {
            row += &b;
        }
        z
    };
    let mut h = layer(&xd, 0);
    h.apply(|v| *v = v.max(0.0));
    for mut row in h.row_iter_mut() {
        let n = row.norm().max(1e-12);
        row /= n;
        assert!(n <= 1e-12 || (row.norm() - 1.0).abs() < 1e-9);
    }
    let out = layer(&h, 1);
    let got = run_node(&spec, &p, &g, &x, false);
    assert_close(&got, &Matrix::from_vec(3, 2, out.transpose().as_slice().to_vec()), 1e-10);
}

#[test]
fn node_models_equivariant_under_relabeling() {
    let mut r = rng();
    let n = 7;
    let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 0), (1, 4)];
    let g = build_graph(n, &edges, true).unwrap();
    let x = random(n, 3, &mut r);
    let perm = [3, 0, 6, 1, 5, 2, 4]; // new id of old node i
    let pg = build_graph(n, &edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect::<Vec<_>>(), true).unwrap();
    let mut px = Matrix::zeros(n, 3);
    for i in 0..n {
        px.row_mut(perm[i]).copy_from_slice(x.row(i));
    }
    for f in [Family::Gcn, Family::Gat, Family::Sage] {
        let spec = ModelSpec::default_for(f, 3, 2);
        let p = ModelParams::init(&spec, &mut r);
        let a = run_node(&spec, &p, &g, &x, false);
        let b = run_node(&spec, &p, &pg, &px, false);
        for i in 0..n {
            for c in 0..2 {
                assert!((a.get(i, c) - b.get(perm[i], c)).abs() < 1e-9, "{f:?}");
            }
        }
    }
}

#[test]
fn gin_single_node_readout_repeats_input() {
    let g = Graph::empty(1);
    let x = Matrix::from_rows(&[vec![0.5, 2.0]]);
    let spec = ModelSpec { num_layers: 3, hidden_dim: 2, dropout: 0.0, ..ModelSpec::default_for(Family::Gin, 2, 6 + 2) };
    let mut pairs = vec![];
    for i in 0..3 {
        pairs.push((format!("conv{i}.lin1.weight"), Matrix::identity(2)));
        pairs.push((format!("conv{i}.lin1.bias"), Matrix::zeros(1, 2)));
        pairs.push((format!("conv{i}.lin2.weight"), Matrix::identity(2)));
        pairs.push((format!("conv{i}.lin2.bias"), Matrix::zeros(1, 2)));
    }
    pairs.push(("head.weight".into(), Matrix::identity(8)));
    pairs.push(("head.bias".into(), Matrix::zeros(1, 8)));
    let p = ModelParams::from_tensors(pairs.into_iter().collect());
    let out = run_graph(&spec, &p, &[&g], &[&x]);
    assert_eq!(out.data, vec![0.5, 2.0, 0.5, 2.0, 0.5, 2.0, 0.5, 2.0]);
}

#[test]
fn graph_models_batch_equals_per_graph_and_permutation_invariant() {
    let mut r = rng();
    let g1 = build_graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], true).unwrap();
    let g2 = build_graph(3, &[(0, 1), (1, 2)], true).unwrap();
    let x1 = random(5, 3, &mut r);
    let x2 = random(3, 3, &mut r);
    let perm = [2, 4, 0, 1, 3];
    let pg1 = build_graph(5, &g1.edges().iter().map(|&(a, b)| (perm[a], perm[b])).collect::<Vec<_>>(), true).unwrap();
    let mut px1 = Matrix::zeros(5, 3);
    for i in 0..5 {
        px1.row_mut(perm[i]).copy_from_slice(x1.row(i));
    }
    for f in [Family::Gin, Family::TopkPool] {
        let spec = ModelSpec { hidden_dim: 8, pool_ratio: 0.8, ..ModelSpec::default_for(f, 3, 2) };
        let p = ModelParams::init(&spec, &mut r);
        let both = run_graph(&spec, &p, &[&g1, &g2], &[&x1, &x2]);
        let a = run_graph(&spec, &p, &[&g1], &[&x1]);
        let b = run_graph(&spec, &p, &[&g2], &[&x2]);
        assert_close(&both, &Matrix::vstack([&a, &b], 2), 1e-9);
        let pa = run_graph(&spec, &p, &[&pg1], &[&px1]);
        assert_close(&pa, &a, 1e-9);
    }
}

#[test]
fn topk_selection_rules() {
    // sort oracle on a 4-node graph
    let scores = [0.3, -1.0, 0.9, 0.3];
    assert_eq!(topk_select(&scores, &[0; 4], 1, 0.5), vec![0, 2]);
    assert_eq!(topk_select(&scores, &[0; 4], 1, 0.6), vec![0, 2, 3]);
    assert_eq!(topk_select(&scores, &[0; 4], 1, 1.0), vec![0, 1, 2, 3]);
    let mut r = rng();
    for _ in 0..50 {
        let ratio: f64 = r.gen_range(0.01..1.0);
        let graph_of = vec![0, 0, 0, 1, 2, 2];
        let s: Vec<f64> = (0..6).map(|_| r.gen()).collect();
        let keep = topk_select(&s, &graph_of, 3, ratio);
        for gi in 0..3 {
            let members: Vec<usize> = (0..6).filter(|&v| graph_of[v] == gi).collect();
            let kept: Vec<usize> = keep.iter().copied().filter(|&v| graph_of[v] == gi).collect();
            let want = ((ratio * members.len() as f64).ceil() as usize).max(1);
            assert_eq!(kept.len(), want);
            let min_kept = kept.iter().map(|&v| s[v]).fold(f64::INFINITY, f64::min);
            assert!(members.iter().filter(|v| !kept.contains(v)).all(|&v| s[v] <= min_kept));
        }
    }
}

#[test]
fn topk_ratio_one_keeps_all_with_gating() {
    let mut r = rng();
    let g = build_graph(4, &[(0, 1), (1, 2), (2, 3)], true).unwrap();
    let x = random(4, 3, &mut r);
    let spec = ModelSpec { num_layers: 1, hidden_dim: 3, pool_ratio: 1.0, dropout: 0.0, ..ModelSpec::default_for(Family::TopkPool, 3, 2) };
    let p = ModelParams::init(&spec, &mut r);
    let b = GraphBatch::new(&[&g], &[&x]).unwrap();
    let mut t = Tape::new();
    let pv = ParamVars::record(&mut t, &p);
    forward_graph(&mut t, &spec, &pv, &b, false, &mut rng()).unwrap();
    // the mean-pool input is the gated node matrix, still four rows
    let n_rows_four = (0..t.len()).any(|i| t.shape_of_index(i) == (4, 3));
    assert!(n_rows_four);
}

#[test]
fn segment_ops_on_empty_edge_lists() {
    let g = Graph::empty(3);
    let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]);
    let spec = ModelSpec { hidden_dim: 2, dropout: 0.0, ..ModelSpec::default_for(Family::Gin, 1, 2) };
    let p = ModelParams::init(&spec, &mut rng());
    assert!(run_graph(&spec, &p, &[&g], &[&x]).all_finite());
}

#[test]
fn batch_index_validation() {
    assert!(BatchIndex { graph_of: vec![0, 0, 1], num_graphs: 2 }.validate().is_ok());
    assert!(BatchIndex { graph_of: vec![1, 0], num_graphs: 2 }.validate().is_err());
    assert!(BatchIndex { graph_of: vec![0, 2], num_graphs: 2 }.validate().is_err());
}

#[test]
fn spmm_gradient_uses_transpose() {
    let s = Arc::new(crate::graph::SparseMatrix::from_dense(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0]));
    let mut t = Tape::new();
    let b = t.leaf(Matrix::from_vec(3, 1, vec![1.0, 1.0, 1.0]));
    let y = t.spmm(s, b).unwrap();
    let l = t.sum(y);
    let g = t.backward(l);
    assert_eq!(g.get(b).unwrap().data, vec![1.0, 3.0, 2.0]);
}
