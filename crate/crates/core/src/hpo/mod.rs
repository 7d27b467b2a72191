//! Hyper-parameter search: typed spaces, random search and TPE.

mod space;
mod tpe;

use std::cell::Cell;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use space::{space_sample, Assignment, HyperParamSpec, ParamKind, ParamValue, Scale, SearchSpace};
pub use tpe::{tpe_split, tpe_suggest};

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("tpe needs a nonempty history")]
    EmptyHistory,
}

pub type Result<T> = std::result::Result<T, HpoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Tpe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub method: Method,
    pub n_trials: usize,
    /// Seconds; checked between trials.
    pub time_budget: Option<f64>,
    pub seed: u64,
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self { method: Method::Tpe, n_trials: 10, time_budget: None, seed: 0, gamma: 0.25, n_candidates: 24, n_startup: 5 }
    }
}

impl HpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(HpoError::Config("n_trials must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(HpoError::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.n_candidates == 0 {
            return Err(HpoError::Config("n_candidates must be positive".into()));
        }
        if self.time_budget.is_some_and(|b| !(b >= 0.0)) {
            return Err(HpoError::Config("time_budget must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One evaluated assignment. Failed trials carry score `-inf` and an error note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub assignment: Assignment,
    #[serde(serialize_with = "ser_score", deserialize_with = "de_score")]
    pub score: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

// JSON has no infinities; a failed trial's score is written as null
fn ser_score<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

fn de_score<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
}

/// Monotone seconds source; swapped for a fake in budget tests.
pub trait Clock {
    fn now(&self) -> f64;
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Manually advanced clock.
#[derive(Debug, Default)]
pub struct FakeClock(Cell<f64>);

impl FakeClock {
    pub fn advance(&self, secs: f64) {
        self.0.set(self.0.get() + secs);
    }
}

impl Clock for FakeClock {
    fn now(&self) -> f64 {
        self.0.get()
    }
}

/// Independent generator for trial `index`, so a trial's draws do not depend
/// on how many trials come after it.
pub fn trial_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Stepwise search state, for callers that interleave several searches.
#[derive(Debug, Clone)]
pub struct HpoSearch {
    pub space: SearchSpace,
    pub cfg: HpoConfig,
    pub history: Vec<Trial>,
}

impl HpoSearch {
    pub fn new(space: SearchSpace, cfg: HpoConfig) -> Result<Self> {
        space.validate()?;
        cfg.validate()?;
        Ok(Self { space, cfg, history: Vec::new() })
    }

    pub fn done(&self) -> bool {
        self.history.len() >= self.cfg.n_trials
    }

    /// Next assignment: random for the first `n_startup` trials or under
    /// random search, TPE afterwards.
    pub fn suggest(&self) -> Result<Assignment> {
        let mut rng = trial_rng(self.cfg.seed, self.history.len());
        if self.cfg.method == Method::Random || self.history.len() < self.cfg.n_startup.max(1) {
            Ok(space_sample(&self.space, &mut rng))
        } else {
            tpe_suggest(&self.space, &self.history, &self.cfg, &mut rng)
        }
    }

    /// Records an outcome. Errors and non-finite scores become `-inf`.
    pub fn record(&mut self, assignment: Assignment, outcome: std::result::Result<f64, String>, seconds: f64) -> &Trial {
        let (score, error) = match outcome {
            Ok(s) if s.is_finite() => (s, None),
            Ok(s) => (f64::NEG_INFINITY, Some(format!("non-finite score {s}"))),
            Err(e) => (f64::NEG_INFINITY, Some(e)),
        };
        self.history.push(Trial { index: self.history.len(), assignment, score, seconds, error });
        self.history.last().expect("just pushed")
    }

    /// Highest score, ties to the earlier trial.
    pub fn best(&self) -> Option<&Trial> {
        best_trial(&self.history)
    }
}

pub fn best_trial(history: &[Trial]) -> Option<&Trial> {
    history.iter().fold(None, |acc: Option<&Trial>, t| match acc {
        Some(b) if b.score >= t.score => Some(b),
        _ => Some(t),
    })
}

#[derive(Debug, Clone)]
pub struct HpoRun {
    pub best: Trial,
    pub history: Vec<Trial>,
    pub budget_exhausted: bool,
}

/// Sequential search. The budget is checked between trials; at least one
/// trial always runs.
pub fn run_hpo<F>(mut objective: F, space: &SearchSpace, cfg: &HpoConfig, clock: &dyn Clock) -> Result<HpoRun>
where
    F: FnMut(&Assignment, usize) -> std::result::Result<f64, String>,
{
    let mut search = HpoSearch::new(space.clone(), cfg.clone())?;
    let start = clock.now();
    let mut budget_exhausted = false;
    while !search.done() {
        if !search.history.is_empty() && cfg.time_budget.is_some_and(|b| clock.now() - start >= b) {
            budget_exhausted = true;
            break;
        }
        let a = search.suggest()?;
        let t0 = clock.now();
        let outcome = objective(&a, search.history.len());
        let secs = clock.now() - t0;
        search.record(a, outcome, secs);
    }
    let best = search.best().expect("at least one trial").clone();
    Ok(HpoRun { best, history: search.history, budget_exhausted })
}
