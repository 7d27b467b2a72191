//! Differentiable tensor operations and the message-passing model families.

pub mod gradcheck;
pub mod linalg;
pub mod models;
pub mod params;
pub mod spec;
pub mod tape;

#[cfg(test)]
mod model_tests;

pub use gradcheck::{gradcheck, gradcheck_params, model_suite, primitive_suite, GradCheckReport, GRADCHECK_H, GRADCHECK_TOL};
pub use models::{
    forward_graph, forward_node, gat_forward, gcn_forward, gin_forward, sage_forward, topk_pool_forward, topk_select, BatchIndex,
    GraphBatch, NodeContext, NodeInput, ParamVars,
};
pub use params::{adam_step, load_params, param_layout, params_from_json, params_to_json, save_params, AdamConfig, ModelParams};
pub use spec::{Activation, Family, ModelSpec};
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

use crate::graph::GraphError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParamShape { name: String, expected: (usize, usize), got: (usize, usize) },
    #[error("parameter file version {got}, expected {expected}")]
    Version { expected: u32, got: u64 },
    #[error("malformed parameter file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, NnError>;
