//! Tree-structured Parzen Estimator suggestions.

use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};

use super::space::{Assignment, HyperParamSpec, ParamKind, ParamValue, SearchSpace};
use super::{HpoConfig, HpoError, Result, Trial};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian mixture over one continuous coordinate, truncated to `[lo, hi]`.
#[derive(Debug, Clone)]
pub(crate) struct Parzen {
    pub mus: Vec<f64>,
    pub sigma: f64,
    pub lo: f64,
    pub hi: f64,
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

impl Parzen {
    /// Components at each observation plus one at the midpoint of the range.
    pub fn fit(obs: &[f64], lo: f64, hi: f64) -> Self {
        let width = hi - lo;
        let sigma = (width / (obs.len().max(1) as f64).sqrt()).max(width * 1e-3).max(f64::MIN_POSITIVE);
        let mut mus = obs.to_vec();
        mus.push(0.5 * (lo + hi));
        Self { mus, sigma, lo, hi }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let logs: Vec<f64> = self
            .mus
            .iter()
            .map(|&mu| {
                let mass = norm_cdf((self.hi - mu) / self.sigma) - norm_cdf((self.lo - mu) / self.sigma);
                let z = (x - mu) / self.sigma;
                -0.5 * z * z - self.sigma.ln() - LN_SQRT_2PI - mass.max(1e-300).ln()
            })
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - (self.mus.len() as f64).ln()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.hi <= self.lo {
            return self.lo;
        }
        let mu = self.mus[rng.gen_range(0..self.mus.len())];
        let normal = Normal::new(mu, self.sigma).expect("positive bandwidth");
        for _ in 0..64 {
            let x = normal.sample(rng);
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        normal.sample(rng).clamp(self.lo, self.hi)
    }
}

/// Per-dimension density of one trial set.
#[derive(Debug, Clone)]
enum Density {
    Continuous(Parzen),
    Categorical(Vec<f64>),
}

impl Density {
    fn fit(p: &HyperParamSpec, trials: &[&Trial]) -> Self {
        match p.kind {
            ParamKind::Categorical => {
                let choices = p.choice_list();
                let mut w = vec![1.0; choices.len()];
                for t in trials {
                    if let Some(i) = t.assignment.get(&p.name).and_then(ParamValue::as_str).and_then(|s| choices.iter().position(|c| c == s)) {
                        w[i] += 1.0;
                    }
                }
                let total: f64 = w.iter().sum();
                Density::Categorical(w.into_iter().map(|x| x / total).collect())
            }
            _ => {
                let (lo, hi) = p.internal_bounds();
                let obs: Vec<f64> = trials.iter().filter_map(|t| t.assignment.get(&p.name)?.as_f64()).map(|x| p.to_internal(x)).collect();
                Density::Continuous(Parzen::fit(&obs, lo, hi))
            }
        }
    }

    fn log_pdf(&self, p: &HyperParamSpec, v: &ParamValue) -> f64 {
        match self {
            Density::Categorical(w) => {
                let i = v.as_str().and_then(|s| p.choice_list().iter().position(|c| c == s)).unwrap_or(0);
                w[i].ln()
            }
            Density::Continuous(pz) => pz.log_pdf(p.to_internal(v.as_f64().unwrap_or(pz.lo))),
        }
    }

    fn sample<R: Rng>(&self, p: &HyperParamSpec, rng: &mut R) -> ParamValue {
        match self {
            Density::Categorical(w) => {
                let idx = WeightedIndex::new(w).expect("positive weights").sample(rng);
                ParamValue::Cat(p.choice_list()[idx].clone())
            }
            Density::Continuous(pz) => p.from_internal(pz.sample(rng)),
        }
    }
}

/// Splits trials into the good set (top `⌈gamma·n⌉`, at least one) and the rest.
/// Ties in score are broken by earlier trial index.
pub fn tpe_split(history: &[Trial], gamma: f64) -> (Vec<&Trial>, Vec<&Trial>) {
    let mut sorted: Vec<&Trial> = history.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    let n_good = ((gamma * history.len() as f64).ceil() as usize).clamp(1, history.len());
    let bad = sorted.split_off(n_good);
    (sorted, bad)
}

/// Draws `n_candidates` assignments from the good-set density and returns the
/// one maximizing `Π l(x)/g(x)` over dimensions (ties to the first drawn).
pub fn tpe_suggest<R: Rng>(space: &SearchSpace, history: &[Trial], cfg: &HpoConfig, rng: &mut R) -> Result<Assignment> {
    if history.is_empty() {
        return Err(HpoError::EmptyHistory);
    }
    let (good, bad) = tpe_split(history, cfg.gamma);
    let models: Vec<(Density, Density)> = space.params.iter().map(|p| (Density::fit(p, &good), Density::fit(p, &bad))).collect();
    let mut best: Option<(f64, Assignment)> = None;
    for _ in 0..cfg.n_candidates.max(1) {
        let mut cand = Assignment::new();
        let mut score = 0.0;
        for (p, (l, g)) in space.params.iter().zip(&models) {
            let v = l.sample(p, rng);
            score += l.log_pdf(p, &v) - g.log_pdf(p, &v);
            cand.insert(p.name.clone(), v);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    Ok(best.expect("at least one candidate").1)
}
