use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Result, SolverError};
use crate::hpo::{Assignment, Trial};
use crate::nn::{save_params, ModelParams, ModelSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub digest: String,
    /// Nodes for node tasks, graphs for graph tasks.
    pub n: usize,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestInfo {
    pub assignment: Assignment,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub family: String,
    pub trials: Vec<Trial>,
    /// `None` when no trial of this model succeeded.
    pub best: Option<BestInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub method: String,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fe: f64,
    pub hpo: f64,
    pub ensemble: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub schema_version: u32,
    pub dataset: DatasetInfo,
    pub models: Vec<ModelReport>,
    pub ensemble: Option<EnsembleReport>,
    /// Model names by descending validation accuracy, ties in config order.
    pub leaderboard: Vec<String>,
    pub timings: Timings,
    pub budget_exhausted: bool,
    pub seed: u64,
    pub version: String,
}

impl SolverReport {
    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        r.timings = Timings::default();
        for m in &mut r.models {
            for t in &mut m.trials {
                t.seconds = 0.0;
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let got = v.get("schema_version").and_then(serde_json::Value::as_u64);
        if got != Some(SCHEMA_VERSION as u64) {
            return Err(SolverError::Schema { expected: SCHEMA_VERSION, got });
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn model(&self, name: &str) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Plain-text leaderboard.
    pub fn render(&self) -> String {
        let mut out = format!(
            "dataset {} ({} task, n={}, digest {})\n",
            self.dataset.name,
            self.dataset.task,
            self.dataset.n,
            &self.dataset.digest[..self.dataset.digest.len().min(12)]
        );
        out += &format!("{:<4} {:<16} {:>8} {:>8} {:>7}\n", "rank", "model", "val", "test", "trials");
        for (i, name) in self.leaderboard.iter().enumerate() {
            let Some(m) = self.model(name) else { continue };
            let (val, test) = m.best.as_ref().map_or(("-".into(), "-".into()), |b| (format!("{:.4}", b.val), format!("{:.4}", b.test)));
            out += &format!("{:<4} {:<16} {:>8} {:>8} {:>7}\n", i + 1, name, val, test, m.trials.len());
        }
        match &self.ensemble {
            Some(e) => out += &format!("ensemble {}: val {:.4} test {:.4}\n", e.method, e.val, e.test),
            None => out += "ensemble: none\n",
        }
        out += &format!(
            "time fe {:.2}s hpo {:.2}s ensemble {:.2}s total {:.2}s{}\n",
            self.timings.fe,
            self.timings.hpo,
            self.timings.ensemble,
            self.timings.total,
            if self.budget_exhausted { " (budget exhausted)" } else { "" }
        );
        out
    }
}

/// The trained parameters kept for a model's best trial; one entry per fold
/// under cross-validation.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub name: String,
    pub spec: ModelSpec,
    pub params: Vec<ModelParams>,
}

fn io_err(path: &Path, e: std::io::Error) -> SolverError {
    SolverError::Io { path: path.display().to_string(), source: e }
}

fn atomic_write(path: &Path, text: &str) -> Result<()> {
    let tmp: PathBuf = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Writes `results.json` into `dir`, creating it if needed.
pub fn write_report(report: &SolverReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    atomic_write(&dir.join(RESULTS_FILE), &report.to_json()?)
}

pub fn read_report(dir: &Path) -> Result<SolverReport> {
    let path = dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    SolverReport::from_json(&text)
}

/// Saves each model's parameters as `<name>.params.json`, or
/// `<name>.fold<i>.params.json` under cross-validation.
pub fn save_models(models: &[TrainedModel], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut paths = Vec::new();
    for m in models {
        let safe: String = m.name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
        for (i, p) in m.params.iter().enumerate() {
            let file = if m.params.len() == 1 { format!("{safe}.params.json") } else { format!("{safe}.fold{i}.params.json") };
            let path = dir.join(file);
            save_params(p, &m.spec, &path)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
