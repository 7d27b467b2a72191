//! Training loops, early stopping and evaluation protocols.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::accuracy;
use crate::graph::{FoldPlan, GraphDataset, GraphError, NodeDataset, SplitMasks};
use crate::matrix::{softmax_rows, Matrix};
use crate::nn::{adam_step, forward_graph, forward_node, AdamConfig, GraphBatch, ModelParams, ModelSpec, NnError, NodeContext, ParamVars, Tape};

/// Graphs per forward pass when evaluating.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss is not finite at epoch {epoch}")]
    NanLoss { epoch: usize },
    #[error("empty training set")]
    EmptyTrain,
    #[error("cross-validation needs k >= 3, got {0}")]
    TooFewFolds(usize),
    #[error("graph {0} has no node features")]
    MissingFeatures(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.01, weight_decay: 5e-4, max_epochs: 300, patience: 50, batch_size: 32, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be nonnegative");
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return bad("max_epochs, patience and batch_size must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience exceeds max_epochs");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub best_params: ModelParams,
    pub best_val_metric: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    /// Accuracy of `best_params` on the test rows; `None` when no test set was given.
    pub test_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalProtocol {
    FixedSplit,
    Kfold { k: usize },
}

/// Tracks the best epoch. The snapshot moves on higher validation accuracy,
/// or equal accuracy with lower validation loss; the patience counter resets
/// only on strictly higher accuracy.
struct EarlyStopper {
    patience: usize,
    best: Option<(f64, f64, usize, ModelParams)>,
    stale: usize,
}

impl EarlyStopper {
    fn new(patience: usize) -> Self {
        Self { patience, best: None, stale: 0 }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, epoch: usize, acc: f64, loss: f64, params: &ModelParams) -> bool {
        let (better, strictly) = match &self.best {
            None => (true, true),
            Some((a, l, _, _)) => (acc > *a || (acc == *a && loss < *l), acc > *a),
        };
        if better {
            self.best = Some((acc, loss, epoch, params.clone()));
        }
        if strictly {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

fn grads_by_name(tape: &Tape, pv: &ParamVars, loss: crate::nn::Var) -> BTreeMap<String, Matrix> {
    let g = tape.backward(loss);
    pv.0.iter().filter_map(|(k, &v)| g.get(v).map(|m| (k.clone(), m.clone()))).collect()
}

fn params_finite(p: &ModelParams) -> bool {
    p.tensors.values().all(Matrix::all_finite)
}

fn check_spec(spec: &ModelSpec, in_dim: usize, num_classes: usize) -> Result<()> {
    spec.validate()?;
    if spec.in_dim != in_dim || spec.out_dim != num_classes {
        return Err(TrainError::Config(format!(
            "spec is {}→{} but data is {}→{}",
            spec.in_dim, spec.out_dim, in_dim, num_classes
        )));
    }
    Ok(())
}

fn loss_on(probs: &Matrix, labels: &[usize], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|&r| -probs.get(r, labels[r]).max(1e-300).ln()).sum::<f64>() / rows.len() as f64
}

fn node_probs(spec: &ModelSpec, params: &ModelParams, ctx: &NodeContext) -> Result<Matrix> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = forward_node(&mut tape, spec, &pv, ctx, false, &mut rng)?;
    Ok(softmax_rows(tape.value(z)))
}

fn select(probs: &Matrix, labels: &[usize], rows: &[usize]) -> (f64, Matrix) {
    let p = probs.select_rows(rows);
    let y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    (accuracy(&p, &y), p)
}

/// Accuracy and class probabilities of a node model on the given rows.
pub fn evaluate_node(spec: &ModelSpec, params: &ModelParams, data: &NodeDataset, rows: &[usize]) -> Result<(f64, Matrix)> {
    let ctx = NodeContext::new(&data.graph, &data.features)?;
    let probs = node_probs(spec, params, &ctx)?;
    Ok(select(&probs, &data.labels, rows))
}

/// Class probabilities of a node model for every node.
pub fn predict_node(spec: &ModelSpec, params: &ModelParams, data: &NodeDataset) -> Result<Matrix> {
    let ctx = NodeContext::new(&data.graph, &data.features)?;
    node_probs(spec, params, &ctx)
}

/// Full-graph training with early stopping on validation accuracy.
pub fn train_node(spec: &ModelSpec, data: &NodeDataset, masks: &SplitMasks, cfg: &TrainConfig) -> Result<TrainResult> {
    masks.validate_for_training()?;
    if masks.len() != data.num_nodes() {
        return Err(TrainError::Config(format!("masks cover {} nodes, graph has {}", masks.len(), data.num_nodes())));
    }
    let test = SplitMasks::indices(&masks.test);
    fit_node(spec, data, &SplitMasks::indices(&masks.train), &SplitMasks::indices(&masks.val), Some(&test), cfg)
}

/// As [`train_node`] with explicit row sets. Labels outside `train` and
/// `val` are not read until the optional final test evaluation.
pub fn fit_node(spec: &ModelSpec, data: &NodeDataset, train: &[usize], val: &[usize], test: Option<&[usize]>, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if val.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()));
    }
    if let Some(&bad) = train.iter().chain(val).find(|&&i| i >= data.num_nodes()) {
        return Err(TrainError::Config(format!("node index {bad} out of range")));
    }
    if data.features.cols == 0 {
        return Err(TrainError::Config("node features are empty".into()));
    }
    check_spec(spec, data.features.cols, data.num_classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(spec, &mut rng);
    let ctx = NodeContext::new(&data.graph, &data.features)?;
    let train_rows = Arc::new(train.to_vec());
    let val_rows = val.to_vec();
    let mut labels_vec = vec![0; data.num_nodes()];
    for &r in train.iter().chain(val) {
        labels_vec[r] = data.labels[r];
    }
    let labels = Arc::new(labels_vec);
    let adam = cfg.adam();

    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let mut tape = Tape::new();
        let pv = ParamVars::record(&mut tape, &params);
        let z = forward_node(&mut tape, spec, &pv, &ctx, true, &mut rng)?;
        let loss = tape.softmax_cross_entropy(z, labels.clone(), train_rows.clone())?;
        let train_loss = tape.value(loss).data[0];
        if !train_loss.is_finite() {
            return Err(TrainError::NanLoss { epoch });
        }
        let grads = grads_by_name(&tape, &pv, loss);
        adam_step(&mut params, &grads, &adam);
        if !params_finite(&params) {
            return Err(TrainError::NanLoss { epoch });
        }

        let probs = node_probs(spec, &params, &ctx)?;
        let (val_acc, _) = select(&probs, &labels, &val_rows);
        let val_loss = loss_on(&probs, &labels, &val_rows);
        history.push(EpochRecord { train_loss, val_acc, val_loss });
        if stopper.observe(epoch, val_acc, val_loss, &params) {
            break;
        }
    }
    let (best_val_metric, best_val_loss, best_epoch, best_params) = stopper.best.expect("at least one epoch runs");
    let test_metric = match test {
        Some(rows) if !rows.is_empty() => Some(select(&node_probs(spec, &best_params, &ctx)?, &data.labels, rows).0),
        _ => None,
    };
    Ok(TrainResult { best_params, best_val_metric, best_val_loss, best_epoch, test_metric, epochs_run: history.len(), history })
}

fn graph_features(ds: &GraphDataset) -> Result<Vec<&Matrix>> {
    ds.features.iter().enumerate().map(|(i, f)| f.as_ref().ok_or(TrainError::MissingFeatures(i))).collect()
}

fn batch_of(ds: &GraphDataset, feats: &[&Matrix], idx: &[usize]) -> Result<GraphBatch> {
    let gs: Vec<_> = idx.iter().map(|&i| &ds.graphs[i]).collect();
    let xs: Vec<_> = idx.iter().map(|&i| feats[i]).collect();
    Ok(GraphBatch::new(&gs, &xs)?)
}

fn graph_probs(spec: &ModelSpec, params: &ModelParams, ds: &GraphDataset, feats: &[&Matrix], idx: &[usize]) -> Result<Matrix> {
    let mut parts = Vec::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let b = batch_of(ds, feats, chunk)?;
        let mut tape = Tape::new();
        let pv = ParamVars::record(&mut tape, params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = forward_graph(&mut tape, spec, &pv, &b, false, &mut rng)?;
        parts.push(softmax_rows(tape.value(z)));
    }
    Ok(Matrix::vstack(parts.iter(), spec.out_dim))
}

/// Accuracy and class probabilities of a graph model on the listed graphs.
pub fn evaluate_graph(spec: &ModelSpec, params: &ModelParams, ds: &GraphDataset, idx: &[usize]) -> Result<(f64, Matrix)> {
    let feats = graph_features(ds)?;
    let probs = graph_probs(spec, params, ds, &feats, idx)?;
    let y: Vec<usize> = idx.iter().map(|&i| ds.graph_labels[i]).collect();
    Ok((accuracy(&probs, &y), probs))
}

/// Mini-batch training over block-diagonal batches with early stopping.
pub fn train_graph(spec: &ModelSpec, ds: &GraphDataset, train: &[usize], val: &[usize], test: &[usize], cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if val.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()));
    }
    if let Some(&bad) = train.iter().chain(val).chain(test).find(|&&i| i >= ds.len()) {
        return Err(TrainError::Config(format!("graph index {bad} out of range")));
    }
    let feats = graph_features(ds)?;
    check_spec(spec, feats[0].cols, ds.num_classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(spec, &mut rng);
    let adam = cfg.adam();
    let val_y: Vec<usize> = val.iter().map(|&i| ds.graph_labels[i]).collect();
    let mut order = train.to_vec();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = batch_of(ds, &feats, chunk)?;
            let y = Arc::new(chunk.iter().map(|&i| ds.graph_labels[i]).collect::<Vec<_>>());
            let rows = Arc::new((0..chunk.len()).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let pv = ParamVars::record(&mut tape, &params);
            let z = forward_graph(&mut tape, spec, &pv, &b, true, &mut rng)?;
            let loss = tape.softmax_cross_entropy(z, y, rows)?;
            let l = tape.value(loss).data[0];
            if !l.is_finite() {
                return Err(TrainError::NanLoss { epoch });
            }
            total += l * chunk.len() as f64;
            let grads = grads_by_name(&tape, &pv, loss);
            adam_step(&mut params, &grads, &adam);
            if !params_finite(&params) {
                return Err(TrainError::NanLoss { epoch });
            }
        }
        let probs = graph_probs(spec, &params, ds, &feats, val)?;
        let val_acc = accuracy(&probs, &val_y);
        let rows: Vec<usize> = (0..val.len()).collect();
        let val_loss = loss_on(&probs, &val_y, &rows);
        history.push(EpochRecord { train_loss: total / train.len() as f64, val_acc, val_loss });
        if stopper.observe(epoch, val_acc, val_loss, &params) {
            break;
        }
    }
    let (best_val_metric, best_val_loss, best_epoch, best_params) = stopper.best.expect("at least one epoch runs");
    let test_metric = if test.is_empty() { None } else { Some(evaluate_graph(spec, &best_params, ds, test)?.0) };
    Ok(TrainResult { best_params, best_val_metric, best_val_loss, best_epoch, test_metric, epochs_run: history.len(), history })
}

/// Train/validation/test indices of fold `i`: test is fold `i`, validation
/// is fold `i + 1 (mod k)`, training is everything else.
pub fn cv_split(plan: &FoldPlan, i: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let test = plan.fold(i);
    let val = plan.fold((i + 1) % plan.k);
    let train = (0..plan.fold_of.len()).filter(|&g| plan.fold_of[g] != i && plan.fold_of[g] != (i + 1) % plan.k).collect();
    (train, val, test)
}

/// Seed used for fold `i`; independent of the order folds are processed in.
pub fn fold_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub mean: f64,
    pub std: f64,
    pub folds: Vec<TrainResult>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// k-fold cross-validation; reports mean and population std of test accuracy.
pub fn run_cv(spec: &ModelSpec, ds: &GraphDataset, plan: &FoldPlan, cfg: &TrainConfig) -> Result<CvResult> {
    if plan.k < 3 {
        return Err(TrainError::TooFewFolds(plan.k));
    }
    if plan.fold_of.len() != ds.len() {
        return Err(TrainError::Config(format!("fold plan covers {} graphs, dataset has {}", plan.fold_of.len(), ds.len())));
    }
    let mut folds = Vec::with_capacity(plan.k);
    for i in 0..plan.k {
        let (train, val, test) = cv_split(plan, i);
        let fold_cfg = TrainConfig { seed: fold_seed(cfg.seed, i), ..cfg.clone() };
        folds.push(train_graph(spec, ds, &train, &val, &test, &fold_cfg)?);
    }
    let accs: Vec<f64> = folds.iter().map(|f| f.test_metric.unwrap_or(0.0)).collect();
    let (mean, std) = mean_std(&accs);
    Ok(CvResult { mean, std, folds })
}
