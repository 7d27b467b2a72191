use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HpoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Integer,
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// One searchable dimension. Bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "is_linear")]
    pub scale: Scale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

fn is_linear(s: &Scale) -> bool {
    *s == Scale::Linear
}

impl HyperParamSpec {
    pub fn numerical(name: &str, low: f64, high: f64, scale: Scale) -> Self {
        Self { name: name.into(), kind: ParamKind::Numerical, scale, low: Some(low), high: Some(high), choices: None }
    }

    pub fn integer(name: &str, low: i64, high: i64, scale: Scale) -> Self {
        Self { name: name.into(), kind: ParamKind::Integer, scale, low: Some(low as f64), high: Some(high as f64), choices: None }
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical,
            scale: Scale::Linear,
            low: None,
            high: None,
            choices: Some(choices.iter().map(|s| s.to_string()).collect()),
        }
    }

    /// Inclusive bounds of a numerical or integer dimension.
    pub fn bounds(&self) -> (f64, f64) {
        (self.low.unwrap_or(0.0), self.high.unwrap_or(0.0))
    }

    pub fn choice_list(&self) -> &[String] {
        self.choices.as_deref().unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HpoError::Space(format!("{}: {m}", self.name)));
        match self.kind {
            ParamKind::Categorical => {
                let Some(c) = &self.choices else { return bad("categorical needs choices".into()) };
                if c.is_empty() {
                    return bad("choices are empty".into());
                }
                let mut seen = std::collections::BTreeSet::new();
                if let Some(d) = c.iter().find(|x| !seen.insert(*x)) {
                    return bad(format!("duplicate choice `{d}`"));
                }
            }
            ParamKind::Integer | ParamKind::Numerical => {
                let (Some(lo), Some(hi)) = (self.low, self.high) else { return bad("low and high are required".into()) };
                if !(lo.is_finite() && hi.is_finite()) {
                    return bad("bounds must be finite".into());
                }
                // a degenerate integer range [k, k] is allowed
                let ok = if self.kind == ParamKind::Integer { lo <= hi } else { lo < hi };
                if !ok {
                    return bad(format!("low {lo} must be below high {hi}"));
                }
                if self.kind == ParamKind::Integer && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                    return bad("integer bounds must be whole numbers".into());
                }
                if self.scale == Scale::Log && lo <= 0.0 {
                    return bad("log scale needs low > 0".into());
                }
            }
        }
        Ok(())
    }

    /// Whether `v` has the right type and lies within this dimension.
    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self.kind, v) {
            (ParamKind::Categorical, ParamValue::Cat(s)) => self.choice_list().contains(s),
            (ParamKind::Integer, ParamValue::Int(i)) => {
                let (lo, hi) = self.bounds();
                (*i as f64) >= lo && (*i as f64) <= hi
            }
            (ParamKind::Numerical, ParamValue::Num(x)) => {
                let (lo, hi) = self.bounds();
                *x >= lo && *x <= hi
            }
            _ => false,
        }
    }

    /// Maps a value to the continuous coordinate TPE models (ln for log scale).
    pub(crate) fn to_internal(&self, x: f64) -> f64 {
        if self.scale == Scale::Log {
            x.ln()
        } else {
            x
        }
    }

    pub(crate) fn internal_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.bounds();
        (self.to_internal(lo), self.to_internal(hi))
    }

    /// Inverse of [`to_internal`](Self::to_internal), rounded and clamped for integers.
    pub(crate) fn from_internal(&self, u: f64) -> ParamValue {
        let x = if self.scale == Scale::Log { u.exp() } else { u };
        let (lo, hi) = self.bounds();
        match self.kind {
            ParamKind::Integer => ParamValue::Int(x.round().clamp(lo, hi) as i64),
            _ => ParamValue::Num(x.clamp(lo, hi)),
        }
    }
}

/// Ordered list of dimensions with unique names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: Vec<HyperParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<HyperParamSpec>) -> Result<Self> {
        let s = Self { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.params {
            p.validate()?;
            if !seen.insert(&p.name) {
                return Err(HpoError::Space(format!("duplicate dimension `{}`", p.name)));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Whether the assignment covers exactly this space and respects every bound.
    pub fn contains(&self, a: &Assignment) -> bool {
        a.len() == self.params.len() && self.params.iter().all(|p| a.get(&p.name).is_some_and(|v| p.contains(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Num(f64),
    Cat(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Num(x) => Some(*x),
            ParamValue::Cat(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Num(x) => write!(f, "{x:.4e}"),
            ParamValue::Cat(s) => f.write_str(s),
        }
    }
}

pub type Assignment = BTreeMap<String, ParamValue>;

/// Draws one value per dimension independently.
pub fn space_sample<R: Rng>(space: &SearchSpace, rng: &mut R) -> Assignment {
    space
        .params
        .iter()
        .map(|p| {
            let v = match p.kind {
                ParamKind::Categorical => {
                    let c = p.choice_list();
                    ParamValue::Cat(c[rng.gen_range(0..c.len())].clone())
                }
                ParamKind::Integer if p.scale == Scale::Linear => {
                    let (lo, hi) = p.bounds();
                    ParamValue::Int(rng.gen_range(lo as i64..=hi as i64))
                }
                _ => {
                    let (lo, hi) = p.internal_bounds();
                    let u = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
                    p.from_internal(u)
                }
            };
            (p.name.clone(), v)
        })
        .collect()
}
