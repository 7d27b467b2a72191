//! Forward passes of the five model families on a [`Tape`].

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use super::params::ModelParams;
use super::spec::{Activation, Family, ModelSpec};
use super::tape::{Tape, Var};
use super::{NnError, Result};
use crate::graph::{normalized_adjacency, row_normalized_adjacency, Graph, SparseMatrix};
use crate::matrix::Matrix;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Feature matrices sparser than this are multiplied in CSR form.
const SPARSE_INPUT_DENSITY: f64 = 0.25;

#[derive(Debug, Clone)]
pub enum NodeInput {
    Dense(Matrix),
    Sparse(Arc<SparseMatrix>),
}

/// Per-dataset operators shared by every forward pass of a node model.
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub num_nodes: usize,
    pub in_dim: usize,
    pub input: NodeInput,
    pub gcn_adj: Arc<SparseMatrix>,
    pub mean_adj: Arc<SparseMatrix>,
    /// Edges of `A + I` (self loops kept once) as source/destination lists.
    pub att_src: Arc<Vec<usize>>,
    pub att_dst: Arc<Vec<usize>>,
}

impl NodeContext {
    pub fn new(graph: &Graph, features: &Matrix) -> Result<Self> {
        if features.rows != graph.num_nodes() {
            return Err(NnError::Shape { op: "node_context", detail: format!("{} feature rows for {} nodes", features.rows, graph.num_nodes()) });
        }
        let input = if features.density() < SPARSE_INPUT_DENSITY {
            NodeInput::Sparse(Arc::new(SparseMatrix::from_dense(features.rows, features.cols, &features.data)))
        } else {
            NodeInput::Dense(features.clone())
        };
        let gcn_adj = Arc::new(normalized_adjacency(graph, true)?);
        let mut src = Vec::with_capacity(gcn_adj.nnz());
        let mut dst = Vec::with_capacity(gcn_adj.nnz());
        for v in 0..gcn_adj.rows {
            for (u, _) in gcn_adj.row(v) {
                src.push(u);
                dst.push(v);
            }
        }
        Ok(Self {
            num_nodes: graph.num_nodes(),
            in_dim: features.cols,
            input,
            gcn_adj,
            mean_adj: Arc::new(row_normalized_adjacency(graph)),
            att_src: Arc::new(src),
            att_dst: Arc::new(dst),
        })
    }
}

/// Node → graph assignment inside a mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchIndex {
    pub graph_of: Vec<usize>,
    pub num_graphs: usize,
}

impl BatchIndex {
    pub fn validate(&self) -> Result<()> {
        if self.graph_of.windows(2).any(|w| w[0] > w[1]) || self.graph_of.iter().any(|&g| g >= self.num_graphs) {
            return Err(NnError::Shape { op: "batch_index", detail: "graph_of must be nondecreasing and below the batch size".into() });
        }
        Ok(())
    }
}

/// Block-diagonal packing of several graphs.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graph: Graph,
    pub x: Matrix,
    pub index: BatchIndex,
    pub src: Arc<Vec<usize>>,
    pub dst: Arc<Vec<usize>>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph], features: &[&Matrix]) -> Result<Self> {
        if graphs.len() != features.len() || graphs.is_empty() {
            return Err(NnError::Shape { op: "graph_batch", detail: format!("{} graphs, {} feature blocks", graphs.len(), features.len()) });
        }
        let cols = features[0].cols;
        for (g, f) in graphs.iter().zip(features) {
            if f.rows != g.num_nodes() || f.cols != cols {
                return Err(NnError::Shape { op: "graph_batch", detail: format!("features {}x{} for {} nodes", f.rows, f.cols, g.num_nodes()) });
            }
        }
        let graph = Graph::disjoint_union(graphs.iter().copied());
        let x = Matrix::vstack(features.iter().copied(), cols);
        let graph_of = graphs.iter().enumerate().flat_map(|(i, g)| std::iter::repeat_n(i, g.num_nodes())).collect();
        let (src, dst) = edge_lists(&graph);
        Ok(Self { graph, x, index: BatchIndex { graph_of, num_graphs: graphs.len() }, src: Arc::new(src), dst: Arc::new(dst) })
    }

    pub fn num_graphs(&self) -> usize {
        self.index.num_graphs
    }
}

/// Stored adjacency entries as (source, destination) lists.
fn edge_lists(g: &Graph) -> (Vec<usize>, Vec<usize>) {
    let mut src = Vec::with_capacity(g.num_entries());
    let mut dst = Vec::with_capacity(g.num_entries());
    for v in 0..g.num_nodes() {
        for &u in g.neighbors(v) {
            src.push(u);
            dst.push(v);
        }
    }
    (src, dst)
}

/// Tape handles for every parameter of one forward pass.
pub struct ParamVars(pub BTreeMap<String, Var>);

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams) -> Self {
        Self(params.tensors.iter().map(|(k, m)| (k.clone(), tape.leaf(m.clone()))).collect())
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0.get(name).copied().ok_or_else(|| NnError::MissingParam(name.to_string()))
    }
}

pub fn activate(tape: &mut Tape, a: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(a),
        Activation::Elu => tape.elu(a),
        Activation::LeakyRelu => tape.leaky_relu(a, LEAKY_SLOPE),
        Activation::Tanh => tape.tanh(a),
    }
}

/// Layer input: the raw sparse features or a value on the tape.
enum Feat {
    Sparse(Arc<SparseMatrix>),
    Var(Var),
}

fn input_feat(tape: &mut Tape, ctx: &NodeContext) -> Feat {
    match &ctx.input {
        NodeInput::Sparse(s) => Feat::Sparse(s.clone()),
        NodeInput::Dense(m) => Feat::Var(tape.leaf(m.clone())),
    }
}

fn drop_feat<R: Rng>(tape: &mut Tape, f: Feat, p: f64, training: bool, rng: &mut R) -> Feat {
    match f {
        Feat::Sparse(s) if training && p > 0.0 => Feat::Sparse(Arc::new(s.dropout(p, rng))),
        Feat::Sparse(s) => Feat::Sparse(s),
        Feat::Var(v) => Feat::Var(tape.dropout(v, p, training, rng)),
    }
}

fn times(tape: &mut Tape, f: &Feat, w: Var) -> Result<Var> {
    match f {
        Feat::Sparse(s) => tape.spmm(s.clone(), w),
        Feat::Var(v) => tape.matmul(*v, w),
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = tape.matmul(x, w)?;
    tape.add_bias(z, b)
}

/// `act(Â H W + b)` per layer with dropout on each layer input; last layer linear.
pub fn gcn_forward<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, ctx: &NodeContext, training: bool, rng: &mut R) -> Result<Var> {
    let mut h = input_feat(tape, ctx);
    for i in 0..spec.num_layers {
        let hd = drop_feat(tape, h, spec.dropout, training, rng);
        let z = times(tape, &hd, pv.get(&format!("conv{i}.weight"))?)?;
        let z = tape.spmm(ctx.gcn_adj.clone(), z)?;
        let z = tape.add_bias(z, pv.get(&format!("conv{i}.bias"))?)?;
        h = Feat::Var(if i + 1 == spec.num_layers { z } else { activate(tape, z, spec.activation) });
    }
    let Feat::Var(out) = h else { unreachable!("at least one layer") };
    Ok(out)
}

/// Multi-head attention over the edges of `A + I`.
pub fn gat_forward<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, ctx: &NodeContext, training: bool, rng: &mut R) -> Result<Var> {
    let n = ctx.num_nodes;
    let mut h = input_feat(tape, ctx);
    for i in 0..spec.num_layers {
        let last = i + 1 == spec.num_layers;
        let (heads, f) = if last { (1, spec.out_dim) } else { (spec.heads, spec.hidden_dim) };
        let hd = drop_feat(tape, h, spec.dropout, training, rng);
        let z = times(tape, &hd, pv.get(&format!("conv{i}.weight"))?)?;
        let mut outs = Vec::with_capacity(heads);
        for k in 0..heads {
            let zk = if heads == 1 { z } else { tape.slice_cols(z, k * f, f)? };
            let s_src = tape.matmul(zk, pv.get(&format!("conv{i}.att_src{k}"))?)?;
            let s_dst = tape.matmul(zk, pv.get(&format!("conv{i}.att_dst{k}"))?)?;
            let e_src = tape.gather(s_src, ctx.att_src.clone())?;
            let e_dst = tape.gather(s_dst, ctx.att_dst.clone())?;
            let e = tape.add(e_src, e_dst)?;
            let e = tape.leaky_relu(e, LEAKY_SLOPE);
            let alpha = tape.segment_softmax(e, ctx.att_dst.clone(), n)?;
            let alpha = tape.dropout(alpha, spec.dropout, training, rng);
            let msg = tape.gather(zk, ctx.att_src.clone())?;
            let msg = tape.mul_col(msg, alpha)?;
            outs.push(tape.segment_sum(msg, ctx.att_dst.clone(), n)?);
        }
        let z = if heads == 1 { outs[0] } else { tape.concat(&outs)? };
        let z = tape.add_bias(z, pv.get(&format!("conv{i}.bias"))?)?;
        h = Feat::Var(if last { z } else { activate(tape, z, spec.activation) });
    }
    let Feat::Var(out) = h else { unreachable!("at least one layer") };
    Ok(out)
}

/// `H W_self + mean_{N(v)}(H) W_neigh + b`; hidden rows are activated then
/// L2-normalized, the last layer is linear.
pub fn sage_forward<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, ctx: &NodeContext, training: bool, rng: &mut R) -> Result<Var> {
    let mut h = input_feat(tape, ctx);
    for i in 0..spec.num_layers {
        let hd = drop_feat(tape, h, spec.dropout, training, rng);
        let zs = times(tape, &hd, pv.get(&format!("conv{i}.w_self"))?)?;
        let zn = times(tape, &hd, pv.get(&format!("conv{i}.w_neigh"))?)?;
        let zn = tape.spmm(ctx.mean_adj.clone(), zn)?;
        let z = tape.add(zs, zn)?;
        let z = tape.add_bias(z, pv.get(&format!("conv{i}.bias"))?)?;
        h = Feat::Var(if i + 1 == spec.num_layers {
            z
        } else {
            let a = activate(tape, z, spec.activation);
            tape.row_l2_normalize(a)
        });
    }
    let Feat::Var(out) = h else { unreachable!("at least one layer") };
    Ok(out)
}

/// Sum-aggregation layers with 2-layer MLPs; the graph embedding is the
/// concatenation of per-layer sum readouts (input included).
pub fn gin_forward<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, b: &GraphBatch, training: bool, rng: &mut R) -> Result<Var> {
    let n = b.graph.num_nodes();
    let ng = b.num_graphs();
    let seg = Arc::new(b.index.graph_of.clone());
    let mut h = tape.leaf(b.x.clone());
    let mut readouts = vec![tape.segment_sum(h, seg.clone(), ng)?];
    for i in 0..spec.num_layers {
        let msg = tape.gather(h, b.src.clone())?;
        let agg = tape.segment_sum(msg, b.dst.clone(), n)?;
        let own = if spec.eps_learnable {
            let eps = pv.get(&format!("conv{i}.eps"))?;
            let one_plus = tape.add_const(eps, 1.0);
            tape.scalar_mul(one_plus, h)?
        } else {
            h
        };
        let a = tape.add(own, agg)?;
        let z = linear(tape, a, pv.get(&format!("conv{i}.lin1.weight"))?, pv.get(&format!("conv{i}.lin1.bias"))?)?;
        let z = activate(tape, z, spec.activation);
        let z = linear(tape, z, pv.get(&format!("conv{i}.lin2.weight"))?, pv.get(&format!("conv{i}.lin2.bias"))?)?;
        h = activate(tape, z, spec.activation);
        readouts.push(tape.segment_sum(h, seg.clone(), ng)?);
    }
    let r = tape.concat(&readouts)?;
    let r = tape.dropout(r, spec.dropout, training, rng);
    linear(tape, r, pv.get("head.weight")?, pv.get("head.bias")?)
}

/// Per graph, the `⌈ratio·n_g⌉` highest-scoring nodes (lower index wins
/// ties), returned in ascending node order.
pub fn topk_select(scores: &[f64], graph_of: &[usize], num_graphs: usize, ratio: f64) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    for (v, &g) in graph_of.iter().enumerate() {
        members[g].push(v);
    }
    let mut keep = Vec::new();
    for mut m in members {
        if m.is_empty() {
            continue;
        }
        let k = ((ratio * m.len() as f64).ceil() as usize).clamp(1, m.len());
        m.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        keep.extend_from_slice(&m[..k]);
    }
    keep.sort_unstable();
    keep
}

/// Blocks of GCN conv → projection score → per-graph top-k → tanh gating;
/// mean‖max readouts summed over blocks feed a 2-layer head.
pub fn topk_pool_forward<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, b: &GraphBatch, training: bool, rng: &mut R) -> Result<Var> {
    let ng = b.num_graphs();
    let mut graph = b.graph.clone();
    let mut graph_of = b.index.graph_of.clone();
    let mut x = tape.leaf(b.x.clone());
    let mut total: Option<Var> = None;
    for i in 0..spec.num_layers {
        let adj = Arc::new(normalized_adjacency(&graph, true)?);
        let z = tape.matmul(x, pv.get(&format!("conv{i}.weight"))?)?;
        let z = tape.spmm(adj, z)?;
        let z = tape.add_bias(z, pv.get(&format!("conv{i}.bias"))?)?;
        let z = activate(tape, z, spec.activation);
        let p = tape.row_l2_normalize(pv.get(&format!("pool{i}.p"))?);
        let pt = tape.transpose(p);
        let score = tape.matmul(z, pt)?;
        let keep = topk_select(&tape.value(score).data, &graph_of, ng, spec.pool_ratio);
        let idx = Arc::new(keep);
        let zk = tape.gather(z, idx.clone())?;
        let sk = tape.gather(score, idx.clone())?;
        let gate = tape.tanh(sk);
        x = tape.mul_col(zk, gate)?;
        graph = graph.induced(&idx);
        graph_of = idx.iter().map(|&v| graph_of[v]).collect();
        let seg = Arc::new(graph_of.clone());
        let mean = tape.segment_mean(x, seg.clone(), ng)?;
        let max = tape.segment_max(x, seg, ng)?;
        let ro = tape.concat(&[mean, max])?;
        total = Some(match total {
            None => ro,
            Some(t) => tape.add(t, ro)?,
        });
    }
    let r = total.expect("at least one block");
    let h = linear(tape, r, pv.get("head.lin1.weight")?, pv.get("head.lin1.bias")?)?;
    let h = activate(tape, h, spec.activation);
    let h = tape.dropout(h, spec.dropout, training, rng);
    linear(tape, h, pv.get("head.lin2.weight")?, pv.get("head.lin2.bias")?)
}

pub fn forward_node<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, ctx: &NodeContext, training: bool, rng: &mut R) -> Result<Var> {
    if ctx.in_dim != spec.in_dim {
        return Err(NnError::Shape { op: spec.family.name(), detail: format!("input width {} but spec expects {}", ctx.in_dim, spec.in_dim) });
    }
    match spec.family {
        Family::Gcn => gcn_forward(tape, spec, pv, ctx, training, rng),
        Family::Gat => gat_forward(tape, spec, pv, ctx, training, rng),
        Family::Sage => sage_forward(tape, spec, pv, ctx, training, rng),
        f => Err(NnError::InvalidSpec(format!("{} is a graph-level family", f.name()))),
    }
}

pub fn forward_graph<R: Rng>(tape: &mut Tape, spec: &ModelSpec, pv: &ParamVars, b: &GraphBatch, training: bool, rng: &mut R) -> Result<Var> {
    if b.x.cols != spec.in_dim {
        return Err(NnError::Shape { op: spec.family.name(), detail: format!("input width {} but spec expects {}", b.x.cols, spec.in_dim) });
    }
    match spec.family {
        Family::Gin => gin_forward(tape, spec, pv, b, training, rng),
        Family::TopkPool => topk_pool_forward(tape, spec, pv, b, training, rng),
        f => Err(NnError::InvalidSpec(format!("{} is a node-level family", f.name()))),
    }
}
