use serde::{Deserialize, Serialize};

use super::{Result, SolverError};
use crate::features::FeatureStep;
use crate::hpo::{Assignment, HpoConfig, HyperParamSpec, ParamValue, Scale, SearchSpace};
use crate::nn::{Activation, Family, ModelSpec};
use crate::train::{EvalProtocol, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Node,
    Graph,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Node => "node",
            Task::Graph => "graph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EnsembleMethod {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "voting")]
    Voting,
    #[serde(rename = "stacking-glm")]
    StackingGlm,
    #[serde(rename = "stacking-gbm")]
    StackingGbm,
}

impl EnsembleMethod {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleMethod::None => "none",
            EnsembleMethod::Voting => "voting",
            EnsembleMethod::StackingGlm => "stacking-glm",
            EnsembleMethod::StackingGbm => "stacking-gbm",
        }
    }
}

/// Shape of the seeded split used when a node dataset carries no masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub per_class: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { per_class: 20, n_val: 500, n_test: 1000 }
    }
}

/// One candidate model: a family, fixed hyper-parameter overrides and the
/// space searched on top of them. A missing space means the default space
/// for the task; an empty list means no search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub family: Family,
    #[serde(default)]
    pub template: Assignment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SearchSpace>,
}

impl ModelEntry {
    pub fn new(family: Family) -> Self {
        Self { name: None, family, template: Assignment::new(), space: None }
    }

    pub fn with_space(mut self, space: SearchSpace) -> Self {
        self.space = Some(space);
        self
    }

    pub fn with_template(mut self, key: &str, v: ParamValue) -> Self {
        self.template.insert(key.into(), v);
        self
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.family.name().to_string())
    }

    pub fn resolved_space(&self, task: Task) -> SearchSpace {
        self.space.clone().unwrap_or_else(|| default_space(task, self.family))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_pipeline: Option<Vec<FeatureStep>>,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub hpo: HpoConfig,
    #[serde(default)]
    pub ensemble: EnsembleMethod,
    #[serde(default = "default_protocol")]
    pub protocol: EvalProtocol,
    #[serde(default)]
    pub split: SplitConfig,
    /// Base training settings that templates and assignments override.
    #[serde(default)]
    pub train: TrainConfig,
    /// Seconds for the whole run; falls back to `hpo.time_budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_protocol() -> EvalProtocol {
    EvalProtocol::FixedSplit
}

impl SolverConfig {
    pub fn new(task: Task, models: Vec<ModelEntry>) -> Self {
        Self {
            task,
            feature_pipeline: None,
            models,
            hpo: HpoConfig::default(),
            ensemble: EnsembleMethod::None,
            protocol: EvalProtocol::FixedSplit,
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            time_budget: None,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SolverError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn budget(&self) -> Option<f64> {
        self.time_budget.or(self.hpo.time_budget)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SolverError::Config(m));
        if self.models.is_empty() {
            return bad("at least one model is required".into());
        }
        if matches!(self.ensemble, EnsembleMethod::StackingGlm | EnsembleMethod::StackingGbm) && self.models.len() < 2 {
            return bad("stacking needs at least two models".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if m.family.is_graph_level() != (self.task == Task::Graph) {
                return bad(format!("{} does not fit a {} task", m.family.name(), self.task.name()));
            }
            if !names.insert(m.display_name()) {
                return bad(format!("duplicate model name `{}`", m.display_name()));
            }
            let space = m.resolved_space(self.task);
            space.validate()?;
            for key in m.template.keys().chain(space.params.iter().map(|p| &p.name)) {
                if !KNOWN_KEYS.contains(&key.as_str()) {
                    return bad(format!("{}: unknown hyper-parameter `{key}`", m.display_name()));
                }
            }
            // the template alone must produce a valid model
            apply_assignment(m.family, 1, 2, &self.train, &m.template, &Assignment::new())?;
        }
        self.hpo.validate()?;
        self.train.validate()?;
        match self.protocol {
            EvalProtocol::Kfold { k } if k < 3 => return bad(format!("k-fold needs k >= 3, got {k}")),
            EvalProtocol::Kfold { .. } if self.task == Task::Node => return bad("k-fold evaluation applies to graph tasks".into()),
            _ => {}
        }
        if self.budget().is_some_and(|b| !(b >= 0.0)) {
            return bad("time_budget must be nonnegative".into());
        }
        Ok(())
    }
}

pub const KNOWN_KEYS: [&str; 12] =
    ["num_layers", "hidden_dim", "dropout", "activation", "heads", "pool_ratio", "eps_learnable", "lr", "weight_decay", "max_epochs", "patience", "batch_size"];

fn as_count(key: &str, v: &ParamValue) -> Result<usize> {
    match v {
        ParamValue::Int(i) if *i >= 0 => Ok(*i as usize),
        ParamValue::Num(x) if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
        _ => Err(SolverError::Config(format!("`{key}` must be a nonnegative integer, got {v:?}"))),
    }
}

fn as_real(key: &str, v: &ParamValue) -> Result<f64> {
    v.as_f64().ok_or_else(|| SolverError::Config(format!("`{key}` must be numeric, got {v:?}")))
}

/// Builds the model and training settings for one trial: family defaults,
/// then the template, then the searched assignment.
pub fn apply_assignment(family: Family, in_dim: usize, out_dim: usize, base: &TrainConfig, template: &Assignment, a: &Assignment) -> Result<(ModelSpec, TrainConfig)> {
    let mut spec = ModelSpec::default_for(family, in_dim, out_dim);
    let mut train = base.clone();
    for (key, v) in template.iter().chain(a.iter()) {
        match key.as_str() {
            "num_layers" => spec.num_layers = as_count(key, v)?,
            "hidden_dim" => spec.hidden_dim = as_count(key, v)?,
            "heads" => spec.heads = as_count(key, v)?,
            "dropout" => spec.dropout = as_real(key, v)?,
            "pool_ratio" => spec.pool_ratio = as_real(key, v)?,
            "activation" => {
                spec.activation = v.as_str().and_then(Activation::parse).ok_or_else(|| SolverError::Config(format!("unknown activation {v:?}")))?
            }
            "eps_learnable" => {
                spec.eps_learnable = match v.as_str() {
                    Some("true") => true,
                    Some("false") => false,
                    _ => return Err(SolverError::Config(format!("eps_learnable must be \"true\" or \"false\", got {v:?}"))),
                }
            }
            "lr" => train.lr = as_real(key, v)?,
            "weight_decay" => train.weight_decay = as_real(key, v)?,
            "max_epochs" => train.max_epochs = as_count(key, v)?,
            "patience" => train.patience = as_count(key, v)?,
            "batch_size" => train.batch_size = as_count(key, v)?,
            other => return Err(SolverError::Config(format!("unknown hyper-parameter `{other}`"))),
        }
    }
    train.patience = train.patience.min(train.max_epochs);
    spec.validate()?;
    train.validate()?;
    Ok((spec, train))
}

/// Search space used when a model entry gives none.
pub fn default_space(task: Task, family: Family) -> SearchSpace {
    let acts = &["relu", "elu", "leaky_relu", "tanh"];
    let mut params = match task {
        Task::Node => vec![
            HyperParamSpec::integer("hidden_dim", 8, 128, Scale::Log),
            HyperParamSpec::integer("num_layers", 2, 3, Scale::Linear),
            HyperParamSpec::numerical("dropout", 0.2, 0.8, Scale::Linear),
            HyperParamSpec::numerical("lr", 1e-4, 1e-1, Scale::Log),
            HyperParamSpec::numerical("weight_decay", 1e-5, 1e-2, Scale::Log),
            HyperParamSpec::categorical("activation", acts),
        ],
        Task::Graph => vec![
            HyperParamSpec::integer("hidden_dim", 16, 128, Scale::Log),
            HyperParamSpec::integer("num_layers", 2, 5, Scale::Linear),
            HyperParamSpec::numerical("dropout", 0.0, 0.6, Scale::Linear),
            HyperParamSpec::numerical("lr", 1e-4, 1e-1, Scale::Log),
            HyperParamSpec::numerical("weight_decay", 1e-6, 1e-3, Scale::Log),
            HyperParamSpec::categorical("activation", acts),
        ],
    };
    if family == Family::TopkPool {
        params.push(HyperParamSpec::numerical("pool_ratio", 0.5, 0.9, Scale::Linear));
    }
    SearchSpace { params }
}
