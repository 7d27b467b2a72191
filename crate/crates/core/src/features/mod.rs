//! Feature engineering: node-feature generators, column selectors and
//! graph-level descriptors, composed by [`FeaturePipeline`].

pub mod generators;
pub mod graph_features;
pub mod graphlet;
pub mod pipeline;
pub mod selectors;

pub use generators::{
    gen_eigen, gen_ldp, gen_normalize, gen_onehot_degree, gen_onehot_id, gen_pagerank, EigenSource, PageRankParams,
    DEFAULT_EIGEN_K, DEFAULT_ONEHOT_ID_CAP,
};
pub use graph_features::{
    graph_stats, heat_time_grid, netlsd_heat, normalized_laplacian_spectrum, GraphFeatureVector, DEFAULT_DENSE_EIGEN_CAP,
};
pub use graphlet::{gen_graphlet, DEFAULT_GRAPHLET_BUDGET, GRAPHLET_NAMES};
pub use pipeline::{FeaturePipeline, FeatureStep, GraphPipelineOutput, PipelineConfig, StepKind, StepState};
pub use selectors::{select_filter_constant, select_gbdt};

use thiserror::Error;

use crate::ensemble::EnsembleError;
use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{n} nodes exceeds the capacity limit of {cap}")]
    Capacity { n: usize, cap: usize },
    #[error("power iteration did not converge (last L1 residual {residual:e})")]
    NonConvergence { residual: f64 },
    #[error("eigensolver did not converge")]
    EigenFailed,
    #[error("graphlet enumeration exceeded its budget of {budget} candidates; try max_size=3")]
    GraphletBudget { budget: u64 },
    #[error("{step}: {msg}")]
    InvalidParam { step: String, msg: String },
    #[error("every feature column is constant on the fit rows")]
    AllConstant,
    #[error("pipeline used before fit")]
    NotFitted,
    #[error("unknown {kind} `{name}`")]
    UnknownStep { kind: String, name: String },
    #[error("step {index} (`{name}`): {source}")]
    Step {
        index: usize,
        name: String,
        #[source]
        source: Box<FeatureError>,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;
