use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gcn,
    Gat,
    Sage,
    Gin,
    TopkPool,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gcn => "gcn",
            Family::Gat => "gat",
            Family::Sage => "sage",
            Family::Gin => "gin",
            Family::TopkPool => "topk_pool",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "gcn" => Family::Gcn,
            "gat" => Family::Gat,
            "sage" | "graphsage" => Family::Sage,
            "gin" => Family::Gin,
            "topk_pool" | "topk" => Family::TopkPool,
            _ => return None,
        })
    }

    /// True for the families that emit one row per graph.
    pub fn is_graph_level(self) -> bool {
        matches!(self, Family::Gin | Family::TopkPool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Elu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => Activation::Relu,
            "elu" => Activation::Elu,
            "leaky_relu" => Activation::LeakyRelu,
            "tanh" => Activation::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
        }
    }
}

/// Architecture description. For GAT, `hidden_dim` is the width of each head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub activation: Activation,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub eps_learnable: bool,
    #[serde(default = "default_ratio")]
    pub pool_ratio: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

fn default_heads() -> usize {
    8
}

fn default_ratio() -> f64 {
    0.8
}

impl ModelSpec {
    /// Standard configuration for each family.
    pub fn default_for(family: Family, in_dim: usize, out_dim: usize) -> Self {
        let base = Self {
            family,
            num_layers: 2,
            hidden_dim: 16,
            dropout: 0.5,
            activation: Activation::Relu,
            heads: 8,
            eps_learnable: false,
            pool_ratio: 0.8,
            in_dim,
            out_dim,
        };
        match family {
            Family::Gcn | Family::Sage => base,
            Family::Gat => Self { hidden_dim: 8, activation: Activation::Elu, ..base },
            Family::Gin => Self { num_layers: 4, hidden_dim: 64, ..base },
            Family::TopkPool => Self { num_layers: 3, hidden_dim: 64, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        if self.num_layers < 1 {
            return bad("num_layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.heads < 1 {
            return bad("heads must be at least 1".into());
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return bad(format!("pool_ratio {} outside (0, 1]", self.pool_ratio));
        }
        if self.hidden_dim < 1 || self.in_dim < 1 || self.out_dim < 1 {
            return bad("hidden_dim, in_dim and out_dim must be positive".into());
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
