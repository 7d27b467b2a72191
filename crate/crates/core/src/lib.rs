//! Automated machine learning for graph-structured data.
//!
//! The pipeline runs feature engineering, per-model hyper-parameter search,
//! ensembling and a final held-out evaluation, in that order.

pub mod graph;
pub mod matrix;
pub mod ensemble;
pub mod features;
pub mod nn;
pub mod synthetic;
pub mod train;
pub mod hpo;
pub mod solver;
pub mod selfcheck;
