//! Fit-then-transform composition of feature steps.
//!
//! Generators append columns to the current features (normalize rewrites
//! them in place), selectors keep a learned column subset, and graph-feature
//! steps produce one descriptor vector per graph.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::generators::{
    gen_eigen, gen_ldp, gen_normalize, gen_onehot_degree, gen_onehot_id, gen_pagerank, EigenSource, PageRankParams,
    DEFAULT_EIGEN_K, DEFAULT_ONEHOT_ID_CAP,
};
use super::graph_features::{graph_stats, heat_time_grid, netlsd_heat, GraphFeatureVector, DEFAULT_DENSE_EIGEN_CAP};
use super::graphlet::{gen_graphlet, DEFAULT_GRAPHLET_BUDGET};
use super::selectors::{select_filter_constant, select_gbdt};
use super::{FeatureError, Result};
use crate::ensemble::GbmParams;
use crate::graph::{Graph, GraphDataset, NodeDataset};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Generator,
    Selector,
    #[serde(alias = "graph-feature")]
    GraphFeature,
}

impl StepKind {
    fn as_str(self) -> &'static str {
        match self {
            StepKind::Generator => "generator",
            StepKind::Selector => "selector",
            StepKind::GraphFeature => "graph_feature",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStep {
    pub kind: StepKind,
    pub name: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl FeatureStep {
    pub fn new(kind: StepKind, name: &str) -> Self {
        Self { kind, name: name.to_string(), params: Map::new() }
    }

    pub fn generator(name: &str) -> Self {
        Self::new(StepKind::Generator, name)
    }

    pub fn selector(name: &str) -> Self {
        Self::new(StepKind::Selector, name)
    }

    pub fn graph_feature(name: &str) -> Self {
        Self::new(StepKind::GraphFeature, name)
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    fn bad(&self, msg: impl Into<String>) -> FeatureError {
        FeatureError::InvalidParam { step: self.name.clone(), msg: msg.into() }
    }

    fn usize_param(&self, key: &str) -> Result<Option<usize>> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_u64().map(|u| Some(u as usize)).ok_or_else(|| self.bad(format!("`{key}` must be a non-negative integer"))),
        }
    }

    fn f64_param(&self, key: &str) -> Result<Option<f64>> {
        match self.params.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| self.bad(format!("`{key}` must be a number"))),
        }
    }

    fn allowed_keys(&self) -> Option<&'static [&'static str]> {
        Some(match (self.kind, self.name.as_str()) {
            (StepKind::Generator, "normalize" | "ldp") => &[],
            (StepKind::Generator, "onehot_id") => &["cap"],
            (StepKind::Generator, "onehot_degree") => &["max_degree"],
            (StepKind::Generator, "pagerank") => &["damping", "tol", "max_iter"],
            (StepKind::Generator, "eigen") => &["k", "matrix", "cap"],
            (StepKind::Generator, "graphlet") => &["max_size", "budget"],
            (StepKind::Selector, "filter_constant") => &[],
            (StepKind::Selector, "gbdt") => &["top_k", "n_rounds", "max_depth"],
            (StepKind::GraphFeature, "graph_stats") => &[],
            (StepKind::GraphFeature, "netlsd") => &["cap"],
            _ => return None,
        })
    }

    /// Checks the name against the registry and every parameter's type.
    pub fn validate(&self) -> Result<()> {
        let allowed = self
            .allowed_keys()
            .ok_or_else(|| FeatureError::UnknownStep { kind: self.kind.as_str().into(), name: self.name.clone() })?;
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(self.bad(format!("unknown parameter `{k}`")));
        }
        for key in ["cap", "max_degree", "max_iter", "k", "max_size", "budget", "top_k", "n_rounds", "max_depth"] {
            self.usize_param(key)?;
        }
        for key in ["damping", "tol"] {
            self.f64_param(key)?;
        }
        if let Some(d) = self.f64_param("damping")? {
            if !(0.0..1.0).contains(&d) {
                return Err(self.bad("damping must lie in [0, 1)"));
            }
        }
        self.eigen_source()?;
        if self.name == "graphlet" {
            let s = self.usize_param("max_size")?.unwrap_or(3);
            if !(3..=4).contains(&s) {
                return Err(self.bad(format!("max_size must be 3 or 4, got {s}")));
            }
        }
        if self.name == "gbdt" {
            match self.usize_param("top_k")? {
                Some(k) if k >= 1 => {}
                _ => return Err(self.bad("`top_k` (>= 1) is required")),
            }
        }
        Ok(())
    }

    fn eigen_source(&self) -> Result<EigenSource> {
        match self.params.get("matrix") {
            None => Ok(EigenSource::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|_| self.bad("matrix must be `adjacency` or `normalized_adjacency`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub steps: Vec<FeatureStep>,
}

/// Per-step learned state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepState {
    Stateless,
    DegreeCap(usize),
    Columns(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub steps: Vec<FeatureStep>,
    pub fitted_state: Option<Vec<StepState>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPipelineOutput {
    pub dataset: GraphDataset,
    /// One vector per graph; empty vectors when no graph-feature step ran.
    pub graph_features: Vec<GraphFeatureVector>,
}

/// Rows the selectors fit on, and the labels of those rows.
struct FitRows<'a> {
    mask: &'a [bool],
    labels: &'a [usize],
}

fn eigen_padded(step: &FeatureStep, g: &Graph) -> Result<Matrix> {
    let k = step.usize_param("k")?.unwrap_or(DEFAULT_EIGEN_K);
    let cap = step.usize_param("cap")?.unwrap_or(DEFAULT_DENSE_EIGEN_CAP);
    if g.num_nodes() > cap {
        return Err(FeatureError::Capacity { n: g.num_nodes(), cap });
    }
    let (vecs, _) = gen_eigen(g, k, step.eigen_source()?)?;
    if vecs.cols == k {
        return Ok(vecs);
    }
    Ok(vecs.hconcat(&Matrix::zeros(vecs.rows, k - vecs.cols)))
}

/// Output of a non-normalize generator for one graph.
fn generate(step: &FeatureStep, state: &StepState, g: &Graph) -> Result<Matrix> {
    Ok(match step.name.as_str() {
        "onehot_id" => gen_onehot_id(g, step.usize_param("cap")?.unwrap_or(DEFAULT_ONEHOT_ID_CAP))?,
        "onehot_degree" => {
            let StepState::DegreeCap(cap) = state else { return Err(FeatureError::NotFitted) };
            gen_onehot_degree(g, *cap)
        }
        "ldp" => gen_ldp(g),
        "pagerank" => {
            let d = PageRankParams::default();
            gen_pagerank(
                g,
                PageRankParams {
                    damping: step.f64_param("damping")?.unwrap_or(d.damping),
                    tol: step.f64_param("tol")?.unwrap_or(d.tol),
                    max_iter: step.usize_param("max_iter")?.unwrap_or(d.max_iter),
                },
            )?
        }
        "eigen" => eigen_padded(step, g)?,
        "graphlet" => gen_graphlet(
            g,
            step.usize_param("max_size")?.unwrap_or(3),
            step.usize_param("budget")?.map_or(DEFAULT_GRAPHLET_BUDGET, |b| b as u64),
        )?,
        other => unreachable!("validated generator `{other}`"),
    })
}

fn append(x: &Matrix, extra: &Matrix) -> Matrix {
    if x.cols == 0 {
        extra.clone()
    } else {
        x.hconcat(extra)
    }
}

fn fit_selector(step: &FeatureStep, x: &Matrix, fit: &FitRows) -> Result<StepState> {
    let cols = match step.name.as_str() {
        "filter_constant" => select_filter_constant(x, fit.mask)?,
        "gbdt" => {
            let params = GbmParams {
                n_rounds: step.usize_param("n_rounds")?.unwrap_or(20),
                max_depth: step.usize_param("max_depth")?.unwrap_or(3),
                ..GbmParams::default()
            };
            select_gbdt(x, fit.labels, fit.mask, step.usize_param("top_k")?.unwrap_or(1), &params)?
        }
        other => unreachable!("validated selector `{other}`"),
    };
    Ok(StepState::Columns(cols))
}

fn apply_columns(state: &StepState, x: &Matrix) -> Result<Matrix> {
    let StepState::Columns(cols) = state else { return Err(FeatureError::NotFitted) };
    if let Some(&c) = cols.iter().find(|&&c| c >= x.cols) {
        return Err(FeatureError::InvalidParam { step: "selector".into(), msg: format!("column {c} out of range for width {}", x.cols) });
    }
    Ok(x.select_columns(cols))
}

fn graph_feature(step: &FeatureStep, g: &Graph) -> Result<GraphFeatureVector> {
    match step.name.as_str() {
        "graph_stats" => Ok(graph_stats(g)),
        "netlsd" => netlsd_heat(g, &heat_time_grid(), step.usize_param("cap")?.unwrap_or(DEFAULT_DENSE_EIGEN_CAP)),
        other => unreachable!("validated graph feature `{other}`"),
    }
}

fn wrap(index: usize, step: &FeatureStep, e: FeatureError) -> FeatureError {
    FeatureError::Step { index, name: step.name.clone(), source: Box::new(e) }
}

impl FeaturePipeline {
    pub fn new(steps: Vec<FeatureStep>) -> Result<Self> {
        for (i, s) in steps.iter().enumerate() {
            s.validate().map_err(|e| wrap(i, s, e))?;
        }
        Ok(Self { steps, fitted_state: None })
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        Self::new(cfg.steps.clone())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| FeatureError::InvalidParam { step: "pipeline".into(), msg: e.to_string() })?;
        Self::from_config(&cfg)
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted_state.is_some()
    }

    /// Fits every step on the rows in `fit_mask` and returns the transformed dataset.
    pub fn fit_transform_node(&mut self, ds: &NodeDataset, fit_mask: &[bool]) -> Result<NodeDataset> {
        let fit = FitRows { mask: fit_mask, labels: &ds.labels };
        let mut states = Vec::with_capacity(self.steps.len());
        let mut x = ds.features.clone();
        for (i, step) in self.steps.iter().enumerate() {
            let (state, next) = Self::node_step(step, None, &ds.graph, x, Some(&fit)).map_err(|e| wrap(i, step, e))?;
            states.push(state);
            x = next;
        }
        self.fitted_state = Some(states);
        Ok(NodeDataset { features: x, ..ds.clone() })
    }

    pub fn transform_node(&self, ds: &NodeDataset) -> Result<NodeDataset> {
        let states = self.fitted_state.as_ref().ok_or(FeatureError::NotFitted)?;
        let mut x = ds.features.clone();
        for (i, (step, state)) in self.steps.iter().zip(states).enumerate() {
            x = Self::node_step(step, Some(state), &ds.graph, x, None).map_err(|e| wrap(i, step, e))?.1;
        }
        Ok(NodeDataset { features: x, ..ds.clone() })
    }

    fn node_step(step: &FeatureStep, state: Option<&StepState>, g: &Graph, x: Matrix, fit: Option<&FitRows>) -> Result<(StepState, Matrix)> {
        match step.kind {
            StepKind::Generator if step.name == "normalize" => Ok((StepState::Stateless, gen_normalize(&x))),
            StepKind::Generator => {
                let state = match state {
                    Some(s) => s.clone(),
                    None if step.name == "onehot_degree" => StepState::DegreeCap(
                        step.usize_param("max_degree")?.unwrap_or_else(|| g.degrees().into_iter().max().unwrap_or(0)),
                    ),
                    None => StepState::Stateless,
                };
                let extra = generate(step, &state, g)?;
                Ok((state, append(&x, &extra)))
            }
            StepKind::Selector => {
                let state = match (state, fit) {
                    (Some(s), _) => s.clone(),
                    (None, Some(f)) => fit_selector(step, &x, f)?,
                    (None, None) => return Err(FeatureError::NotFitted),
                };
                let out = apply_columns(&state, &x)?;
                Ok((state, out))
            }
            StepKind::GraphFeature => Err(FeatureError::InvalidParam {
                step: step.name.clone(),
                msg: "graph-feature steps require a graph-classification dataset".into(),
            }),
        }
    }

    /// Fits on the nodes of the graphs in `fit_graphs`; node labels for the
    /// GBDT selector are their graph's label.
    pub fn fit_transform_graph(&mut self, ds: &GraphDataset, fit_graphs: &[usize]) -> Result<GraphPipelineOutput> {
        let mut in_fit = vec![false; ds.len()];
        for &i in fit_graphs {
            in_fit[i] = true;
        }
        self.run_graph(ds, Some(&in_fit))
    }

    pub fn transform_graph(&self, ds: &GraphDataset) -> Result<GraphPipelineOutput> {
        if self.fitted_state.is_none() {
            return Err(FeatureError::NotFitted);
        }
        let mut me = self.clone();
        me.run_graph(ds, None)
    }

    fn run_graph(&mut self, ds: &GraphDataset, fit_graphs: Option<&[bool]>) -> Result<GraphPipelineOutput> {
        let mut feats: Vec<Matrix> = ds
            .graphs
            .iter()
            .zip(&ds.features)
            .map(|(g, f)| f.clone().unwrap_or_else(|| Matrix::zeros(g.num_nodes(), 0)))
            .collect();
        let mut gfeat = vec![GraphFeatureVector { names: Vec::new(), values: Vec::new() }; ds.len()];
        let mut states = Vec::with_capacity(self.steps.len());
        let prior = self.fitted_state.clone();
        for (i, step) in self.steps.iter().enumerate() {
            let known = if fit_graphs.is_some() { None } else { prior.as_ref().map(|s| &s[i]) };
            let state = self
                .graph_step(step, known, ds, &mut feats, &mut gfeat, fit_graphs)
                .map_err(|e| wrap(i, step, e))?;
            states.push(state);
        }
        if fit_graphs.is_some() {
            self.fitted_state = Some(states);
        }
        let width = feats.first().map_or(0, |m| m.cols);
        let features = if ds.missing_features() && width == 0 { ds.features.clone() } else { feats.into_iter().map(Some).collect() };
        Ok(GraphPipelineOutput { dataset: GraphDataset { features, ..ds.clone() }, graph_features: gfeat })
    }

    fn graph_step(
        &self,
        step: &FeatureStep,
        known: Option<&StepState>,
        ds: &GraphDataset,
        feats: &mut [Matrix],
        gfeat: &mut [GraphFeatureVector],
        fit_graphs: Option<&[bool]>,
    ) -> Result<StepState> {
        match step.kind {
            StepKind::Generator if step.name == "normalize" => {
                for f in feats.iter_mut() {
                    *f = gen_normalize(f);
                }
                Ok(StepState::Stateless)
            }
            StepKind::Generator if step.name == "onehot_id" => Err(FeatureError::InvalidParam {
                step: step.name.clone(),
                msg: "node-id features have no shared width across graphs".into(),
            }),
            StepKind::Generator => {
                let state = match (known, fit_graphs) {
                    (Some(s), _) => s.clone(),
                    (None, Some(fit)) if step.name == "onehot_degree" => StepState::DegreeCap(match step.usize_param("max_degree")? {
                        Some(d) => d,
                        None => (0..ds.len())
                            .filter(|&i| fit[i])
                            .flat_map(|i| ds.graphs[i].degrees())
                            .max()
                            .unwrap_or(0),
                    }),
                    (None, _) => StepState::Stateless,
                };
                for (g, f) in ds.graphs.iter().zip(feats.iter_mut()) {
                    *f = append(f, &generate(step, &state, g)?);
                }
                Ok(state)
            }
            StepKind::Selector => {
                let state = match (known, fit_graphs) {
                    (Some(s), _) => s.clone(),
                    (None, Some(fit)) => {
                        let width = feats.first().map_or(0, |m| m.cols);
                        let stacked = Matrix::vstack(feats.iter(), width);
                        let mut mask = Vec::with_capacity(stacked.rows);
                        let mut labels = Vec::with_capacity(stacked.rows);
                        for (i, f) in feats.iter().enumerate() {
                            mask.extend(std::iter::repeat_n(fit[i], f.rows));
                            labels.extend(std::iter::repeat_n(ds.graph_labels[i], f.rows));
                        }
                        fit_selector(step, &stacked, &FitRows { mask: &mask, labels: &labels })?
                    }
                    (None, None) => return Err(FeatureError::NotFitted),
                };
                for f in feats.iter_mut() {
                    *f = apply_columns(&state, f)?;
                }
                Ok(state)
            }
            StepKind::GraphFeature => {
                for (g, v) in ds.graphs.iter().zip(gfeat.iter_mut()) {
                    v.extend(graph_feature(step, g)?);
                }
                Ok(StepState::Stateless)
            }
        }
    }
}
