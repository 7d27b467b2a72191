//! End-to-end orchestration: feature engineering, per-model search,
//! ensembling and the final held-out evaluation.

mod config;
mod report;

use thiserror::Error;

pub use config::{apply_assignment, default_space, EnsembleMethod, ModelEntry, SolverConfig, SplitConfig, Task, KNOWN_KEYS};
pub use report::{
    read_report, save_models, write_report, BestInfo, DatasetInfo, EnsembleReport, ModelReport, SolverReport, Timings, TrainedModel,
    RESULTS_FILE, SCHEMA_VERSION,
};

use crate::ensemble::{accuracy, stack_fit, stack_predict, vote, BaseOutput, EnsembleError, MetaModelKind};
use crate::features::{FeatureError, FeaturePipeline, FeatureStep, StepKind};
use crate::graph::{planetoid_style_split, stratified_kfold, Dataset, GraphDataset, GraphError, NodeDataset, SplitMasks};
use crate::hpo::{best_trial, Clock, HpoConfig, HpoError, HpoSearch, SystemClock};
use crate::matrix::Matrix;
use crate::nn::{ModelParams, ModelSpec, NnError};
use crate::train::{cv_split, evaluate_graph, fit_node, fold_seed, mean_std, predict_node, train_graph, EvalProtocol, TrainError};

/// Folds used to carve a fixed validation/test split out of a graph dataset.
const GRAPH_HOLDOUT_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("dataset does not fit the config: {0}")]
    Data(String),
    #[error("results schema version {got:?}, expected {expected}")]
    Schema { expected: u32, got: Option<u64> },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub report: SolverReport,
    pub models: Vec<TrainedModel>,
}

/// Train/validation/test index sets; several under cross-validation.
type Split = (Vec<usize>, Vec<usize>, Vec<usize>);

enum Prepared {
    Node { data: NodeDataset, split: Split },
    Graph { data: GraphDataset, splits: Vec<Split> },
}

impl Prepared {
    fn dims(&self) -> (usize, usize) {
        match self {
            Prepared::Node { data, .. } => (data.features.cols, data.num_classes),
            Prepared::Graph { data, .. } => (data.feature_dim().unwrap_or(0), data.num_classes),
        }
    }

    fn splits(&self) -> Vec<&Split> {
        match self {
            Prepared::Node { split, .. } => vec![split],
            Prepared::Graph { splits, .. } => splits.iter().collect(),
        }
    }

    fn labels(&self) -> &[usize] {
        match self {
            Prepared::Node { data, .. } => &data.labels,
            Prepared::Graph { data, .. } => &data.graph_labels,
        }
    }

    /// Class probabilities on `rows` for the parameters of split `j`.
    fn probs(&self, spec: &ModelSpec, params: &ModelParams, rows: &[usize]) -> Result<Matrix> {
        match self {
            Prepared::Node { data, .. } => Ok(predict_node(spec, params, data)?.select_rows(rows)),
            Prepared::Graph { data, .. } => Ok(evaluate_graph(spec, params, data, rows)?.1),
        }
    }
}

fn node_split(ds: &NodeDataset, cfg: &SolverConfig) -> Result<Split> {
    let masks = match &ds.masks {
        Some(m) => m.clone(),
        None => planetoid_style_split(&ds.labels, cfg.split.per_class, cfg.split.n_val, cfg.split.n_test, cfg.seed)?,
    };
    masks.validate_for_training()?;
    Ok((SplitMasks::indices(&masks.train), SplitMasks::indices(&masks.val), SplitMasks::indices(&masks.test)))
}

fn graph_splits(ds: &GraphDataset, cfg: &SolverConfig) -> Result<Vec<Split>> {
    match cfg.protocol {
        EvalProtocol::Kfold { k } => {
            let plan = stratified_kfold(&ds.graph_labels, k, cfg.seed)?;
            Ok((0..k).map(|i| cv_split(&plan, i)).collect())
        }
        EvalProtocol::FixedSplit => {
            let plan = stratified_kfold(&ds.graph_labels, GRAPH_HOLDOUT_FOLDS.min(ds.len().max(3)), cfg.seed)?;
            Ok(vec![cv_split(&plan, 0)])
        }
    }
}

/// Appends each graph's graph-level features to every one of its node rows.
fn broadcast_graph_features(ds: &mut GraphDataset, gf: &[crate::features::GraphFeatureVector]) {
    for (f, v) in ds.features.iter_mut().zip(gf) {
        if v.is_empty() {
            continue;
        }
        if let Some(m) = f {
            let extra = Matrix::from_vec(m.rows, v.len(), (0..m.rows).flat_map(|_| v.values.iter().copied()).collect());
            *m = m.hconcat(&extra);
        }
    }
}

fn prepare(ds: &Dataset, cfg: &SolverConfig) -> Result<Prepared> {
    let steps = cfg.feature_pipeline.clone().unwrap_or_default();
    match (ds, cfg.task) {
        (Dataset::Node(d), Task::Node) => {
            d.validate()?;
            let split = node_split(d, cfg)?;
            let data = if steps.is_empty() {
                d.clone()
            } else {
                let mut mask = vec![false; d.num_nodes()];
                for &i in &split.0 {
                    mask[i] = true;
                }
                FeaturePipeline::new(steps)?.fit_transform_node(d, &mask)?
            };
            Ok(Prepared::Node { data, split })
        }
        (Dataset::Graph(d), Task::Graph) => {
            d.validate()?;
            let splits = graph_splits(d, cfg)?;
            let mut steps = steps;
            if d.missing_features() && !steps.iter().any(|s| s.kind == StepKind::Generator) {
                steps.insert(0, FeatureStep::generator("onehot_degree"));
            }
            let kfold = matches!(cfg.protocol, EvalProtocol::Kfold { .. });
            if kfold && steps.iter().any(|s| s.kind == StepKind::Selector && s.name == "gbdt") {
                return Err(SolverError::Config("the gbdt selector reads labels and cannot be fit once for all folds".into()));
            }
            let data = if steps.is_empty() {
                d.clone()
            } else {
                let fit: Vec<usize> = if kfold { (0..d.len()).collect() } else { splits[0].0.clone() };
                let out = FeaturePipeline::new(steps)?.fit_transform_graph(d, &fit)?;
                let mut data = out.dataset;
                broadcast_graph_features(&mut data, &out.graph_features);
                data
            };
            if data.missing_features() {
                return Err(SolverError::Data("graphs without node features remain after feature engineering".into()));
            }
            Ok(Prepared::Graph { data, splits })
        }
        (d, t) => Err(SolverError::Data(format!("dataset `{}` does not match a {} task", d.name(), t.name()))),
    }
}

/// Best trained instance of one model so far.
struct Incumbent {
    score: f64,
    spec: ModelSpec,
    params: Vec<ModelParams>,
}

fn run_trial(prep: &Prepared, entry: &ModelEntry, cfg: &SolverConfig, assignment: &crate::hpo::Assignment, index: usize) -> Result<(f64, ModelSpec, Vec<ModelParams>)> {
    let (in_dim, out_dim) = prep.dims();
    let (spec, mut tcfg) = apply_assignment(entry.family, in_dim, out_dim, &cfg.train, &entry.template, assignment)?;
    tcfg.seed = cfg.seed.wrapping_add(index as u64);
    match prep {
        Prepared::Node { data, split } => {
            let r = fit_node(&spec, data, &split.0, &split.1, None, &tcfg)?;
            Ok((r.best_val_metric, spec, vec![r.best_params]))
        }
        Prepared::Graph { data, splits } => {
            let mut vals = Vec::with_capacity(splits.len());
            let mut params = Vec::with_capacity(splits.len());
            for (j, (train, val, _)) in splits.iter().enumerate() {
                let fold_cfg = crate::train::TrainConfig { seed: fold_seed(tcfg.seed, j), ..tcfg.clone() };
                let r = train_graph(&spec, data, train, val, &[], &fold_cfg)?;
                vals.push(r.best_val_metric);
                params.push(r.best_params);
            }
            Ok((mean_std(&vals).0, spec, params))
        }
    }
}

fn combine(method: EnsembleMethod, val: Vec<BaseOutput>, y_val: &[usize], test: Vec<BaseOutput>) -> Result<(Matrix, Matrix)> {
    match method {
        EnsembleMethod::Voting => Ok((vote(&val)?, vote(&test)?)),
        EnsembleMethod::StackingGlm | EnsembleMethod::StackingGbm => {
            let kind = if method == EnsembleMethod::StackingGlm { MetaModelKind::Glm } else { MetaModelKind::Gbm };
            let st = stack_fit(&val, y_val, kind)?;
            Ok((stack_predict(&st, &val)?, stack_predict(&st, &test)?))
        }
        EnsembleMethod::None => unreachable!("caller skips ensemble none"),
    }
}

pub fn solve(ds: &Dataset, cfg: &SolverConfig) -> Result<SolveOutput> {
    solve_with_clock(ds, cfg, &SystemClock::default())
}

/// [`solve`] against an explicit clock.
pub fn solve_with_clock(ds: &Dataset, cfg: &SolverConfig, clock: &dyn Clock) -> Result<SolveOutput> {
    cfg.validate()?;
    let t_start = clock.now();
    let budget = cfg.budget();
    let over_budget = || budget.is_some_and(|b| clock.now() - t_start >= b);

    let prep = prepare(ds, cfg)?;
    let t_fe = clock.now();

    let mut searches = Vec::with_capacity(cfg.models.len());
    for (i, m) in cfg.models.iter().enumerate() {
        let hcfg = HpoConfig { seed: fold_seed(cfg.seed, i), time_budget: None, ..cfg.hpo.clone() };
        searches.push(HpoSearch::new(m.resolved_space(cfg.task), hcfg)?);
    }
    let mut incumbents: Vec<Option<Incumbent>> = cfg.models.iter().map(|_| None).collect();
    let mut budget_exhausted = false;
    'rounds: loop {
        let mut progressed = false;
        for (i, entry) in cfg.models.iter().enumerate() {
            if searches[i].done() {
                continue;
            }
            // every model gets its first trial regardless of the budget
            if !searches[i].history.is_empty() && over_budget() {
                budget_exhausted = true;
                break 'rounds;
            }
            let a = searches[i].suggest()?;
            let index = searches[i].history.len();
            let t0 = clock.now();
            let outcome = run_trial(&prep, entry, cfg, &a, index);
            let secs = clock.now() - t0;
            let score = match outcome {
                Ok((score, spec, params)) => {
                    if incumbents[i].as_ref().is_none_or(|inc| score > inc.score) {
                        incumbents[i] = Some(Incumbent { score, spec, params });
                    }
                    Ok(score)
                }
                Err(e) => {
                    log::warn!("{} trial {index} failed: {e}", entry.display_name());
                    Err(e.to_string())
                }
            };
            searches[i].record(a, score, secs);
            progressed = true;
        }
        if !progressed {
            break;
        }
    }
    let t_hpo = clock.now();

    // final evaluation: the only place test labels are read
    let labels = prep.labels();
    let splits = prep.splits();
    let mut models = Vec::with_capacity(cfg.models.len());
    let mut trained = Vec::new();
    for (i, entry) in cfg.models.iter().enumerate() {
        let name = entry.display_name();
        let best = match &incumbents[i] {
            Some(inc) => {
                let mut tests = Vec::with_capacity(splits.len());
                for (j, (_, _, test)) in splits.iter().enumerate() {
                    let p = prep.probs(&inc.spec, &inc.params[j], test)?;
                    let y: Vec<usize> = test.iter().map(|&r| labels[r]).collect();
                    tests.push(accuracy(&p, &y));
                }
                let trial = best_trial(&searches[i].history).expect("at least one trial");
                trained.push(TrainedModel { name: name.clone(), spec: inc.spec.clone(), params: inc.params.clone() });
                Some(BestInfo { assignment: trial.assignment.clone(), val: inc.score, test: mean_std(&tests).0 })
            }
            None => None,
        };
        models.push(ModelReport { name, family: entry.family.name().into(), trials: searches[i].history.clone(), best });
    }

    let mut ensemble = None;
    let usable: Vec<&Incumbent> = incumbents.iter().flatten().collect();
    let needed = if cfg.ensemble == EnsembleMethod::Voting { 1 } else { 2 };
    if cfg.ensemble != EnsembleMethod::None && !over_budget() && usable.len() >= needed {
        let mut vals = Vec::new();
        let mut tests = Vec::new();
        for (j, (_, val, test)) in splits.iter().enumerate() {
            let mut vo = Vec::new();
            let mut to = Vec::new();
            for (k, inc) in usable.iter().enumerate() {
                vo.push(BaseOutput::new(format!("m{k}"), prep.probs(&inc.spec, &inc.params[j], val)?));
                to.push(BaseOutput::new(format!("m{k}"), prep.probs(&inc.spec, &inc.params[j], test)?));
            }
            let y_val: Vec<usize> = val.iter().map(|&r| labels[r]).collect();
            let y_test: Vec<usize> = test.iter().map(|&r| labels[r]).collect();
            let (pv, pt) = combine(cfg.ensemble, vo, &y_val, to)?;
            vals.push(accuracy(&pv, &y_val));
            tests.push(accuracy(&pt, &y_test));
        }
        ensemble = Some(EnsembleReport { method: cfg.ensemble.name().into(), val: mean_std(&vals).0, test: mean_std(&tests).0 });
    } else if cfg.ensemble != EnsembleMethod::None {
        budget_exhausted |= over_budget();
        log::warn!("ensemble {} skipped", cfg.ensemble.name());
    }
    let t_end = clock.now();

    let mut order: Vec<usize> = (0..models.len()).collect();
    let key = |i: usize| models[i].best.as_ref().map_or(f64::NEG_INFINITY, |b| b.val);
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let leaderboard = order.iter().map(|&i| models[i].name.clone()).collect();

    let report = SolverReport {
        schema_version: SCHEMA_VERSION,
        dataset: DatasetInfo { name: ds.name().to_string(), digest: ds.digest(), n: ds.size(), task: cfg.task.name().into() },
        models,
        ensemble,
        leaderboard,
        timings: Timings { fe: t_fe - t_start, hpo: t_hpo - t_fe, ensemble: t_end - t_hpo, total: t_end - t_start },
        budget_exhausted,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    Ok(SolveOutput { report, models: trained })
}

#[cfg(test)]
mod tests;
