//! Voting and stacking over per-model class-probability outputs.

mod gbm;
mod glm;

pub use gbm::{gbm_fit, gbm_importance, gbm_predict, GbmModel, GbmParams, RegressionTree, TreeNode};
pub use glm::{glm_fit, glm_predict, GlmModel, GlmParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no inputs")]
    Empty,
    #[error("shape mismatch: expected {expected:?}, got {got:?} (model `{model}`)")]
    Shape { model: String, expected: (usize, usize), got: (usize, usize) },
    #[error("row count mismatch: expected {expected}, got {got}")]
    RowMismatch { expected: usize, got: usize },
    #[error("column count mismatch: expected {expected}, got {got}")]
    ColMismatch { expected: usize, got: usize },
    #[error("non-finite input features")]
    NonFinite,
    #[error("stacking needs at least 2 base models, got {0}")]
    TooFewModels(usize),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

pub(crate) fn check_finite(x: &Matrix) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(EnsembleError::NonFinite)
    }
}

/// One model's class probabilities over a fixed, row-aligned set of items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseOutput {
    pub model_id: String,
    pub probs: Matrix,
}

impl BaseOutput {
    pub fn new(model_id: impl Into<String>, probs: Matrix) -> Self {
        Self { model_id: model_id.into(), probs }
    }
}

fn check_aligned(outputs: &[BaseOutput]) -> Result<(usize, usize)> {
    let first = outputs.first().ok_or(EnsembleError::Empty)?;
    let shape = (first.probs.rows, first.probs.cols);
    for o in outputs {
        let got = (o.probs.rows, o.probs.cols);
        if got != shape {
            return Err(EnsembleError::Shape { model: o.model_id.clone(), expected: shape, got });
        }
    }
    Ok(shape)
}

/// Unweighted mean of the probability matrices.
pub fn vote(outputs: &[BaseOutput]) -> Result<Matrix> {
    let (rows, cols) = check_aligned(outputs)?;
    let mut out = Matrix::zeros(rows, cols);
    for o in outputs {
        for (a, b) in out.data.iter_mut().zip(&o.probs.data) {
            *a += b;
        }
    }
    let k = outputs.len() as f64;
    out.data.iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

/// Concatenates base probability rows into meta-features.
pub fn meta_features(outputs: &[BaseOutput]) -> Result<Matrix> {
    check_aligned(outputs)?;
    let mut x = outputs[0].probs.clone();
    for o in &outputs[1..] {
        x = x.hconcat(&o.probs);
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaModelKind {
    Glm,
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetaModel {
    Glm(GlmModel),
    Gbm(GbmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stacker {
    pub model_ids: Vec<String>,
    pub num_classes: usize,
    pub meta: MetaModel,
}

/// Fits a meta-model on validation-row base outputs.
pub fn stack_fit(outputs: &[BaseOutput], y: &[usize], kind: MetaModelKind) -> Result<Stacker> {
    if outputs.len() < 2 {
        return Err(EnsembleError::TooFewModels(outputs.len()));
    }
    let x = meta_features(outputs)?;
    if x.rows != y.len() {
        return Err(EnsembleError::RowMismatch { expected: x.rows, got: y.len() });
    }
    let num_classes = outputs[0].probs.cols;
    let meta = match kind {
        MetaModelKind::Glm => MetaModel::Glm(glm_fit(&x, y, num_classes, &GlmParams::default())?),
        MetaModelKind::Gbm => MetaModel::Gbm(gbm_fit(&x, y, num_classes, &GbmParams::default())?),
    };
    Ok(Stacker { model_ids: outputs.iter().map(|o| o.model_id.clone()).collect(), num_classes, meta })
}

pub fn stack_predict(stacker: &Stacker, outputs: &[BaseOutput]) -> Result<Matrix> {
    if outputs.len() != stacker.model_ids.len() {
        return Err(EnsembleError::ColMismatch { expected: stacker.model_ids.len(), got: outputs.len() });
    }
    let x = meta_features(outputs)?;
    match &stacker.meta {
        MetaModel::Glm(m) => glm_predict(m, &x),
        MetaModel::Gbm(m) => gbm_predict(m, &x),
    }
}

pub fn accuracy(probs: &Matrix, y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    probs.argmax_rows().iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stochastic(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let v: Vec<f64> = (0..cols).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = v.iter().sum();
            for (c, x) in v.iter().enumerate() {
                m.set(r, c, x / s);
            }
        }
        m
    }

    fn one_hot(labels: &[usize], c: usize) -> Matrix {
        let mut m = Matrix::zeros(labels.len(), c);
        for (i, &l) in labels.iter().enumerate() {
            m.set(i, l, 1.0);
        }
        m
    }

    #[test]
    fn vote_identity_and_opposites() {
        let a = Matrix::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]);
        let v = vote(&[BaseOutput::new("a", a.clone()), BaseOutput::new("b", a.clone())]).unwrap();
        assert_eq!(v, a);
        let v = vote(&[
            BaseOutput::new("a", Matrix::from_rows(&[vec![1.0, 0.0]])),
            BaseOutput::new("b", Matrix::from_rows(&[vec![0.0, 1.0]])),
        ])
        .unwrap();
        assert_eq!(v.data, vec![0.5, 0.5]);
    }

    #[test]
    fn vote_mean_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ms: Vec<Matrix> = (0..3).map(|_| random_stochastic(6, 4, &mut rng)).collect();
        let outs: Vec<BaseOutput> = ms.iter().enumerate().map(|(i, m)| BaseOutput::new(i.to_string(), m.clone())).collect();
        let v = vote(&outs).unwrap();
        for i in 0..24 {
            let want = (ms[0].data[i] + ms[1].data[i] + ms[2].data[i]) / 3.0;
            assert!((v.data[i] - want).abs() < 1e-12);
        }
        let rev: Vec<BaseOutput> = outs.iter().rev().cloned().collect();
        let w = vote(&rev).unwrap();
        for (a, b) in v.data.iter().zip(&w.data) {
            assert!((a - b).abs() < 1e-15);
        }
        for r in 0..6 {
            assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vote_shape_mismatch() {
        let r = vote(&[BaseOutput::new("a", Matrix::zeros(2, 2)), BaseOutput::new("b", Matrix::zeros(3, 2))]);
        assert!(matches!(r, Err(EnsembleError::Shape { .. })));
        assert!(matches!(vote(&[]), Err(EnsembleError::Empty)));
    }

    #[test]
    fn stacking_beats_voting_with_noise_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<usize> = (0..60).map(|_| rng.gen_range(0..3)).collect();
        let good = one_hot(&y, 3);
        let noise = random_stochastic(60, 3, &mut rng);
        let outs = vec![BaseOutput::new("good", good), BaseOutput::new("noise", noise)];
        let vote_acc = accuracy(&vote(&outs).unwrap(), &y);
        for kind in [MetaModelKind::Glm, MetaModelKind::Gbm] {
            let s = stack_fit(&outs, &y, kind).unwrap();
            let p = stack_predict(&s, &outs).unwrap();
            assert!(accuracy(&p, &y) >= vote_acc, "{kind:?}");
            for r in 0..p.rows {
                assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(p.row(r).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn stacking_identical_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<usize> = (0..50).map(|_| rng.gen_range(0..2)).collect();
        // a model that is right 80% of the time
        let mut p = Matrix::zeros(50, 2);
        for (i, &l) in y.iter().enumerate() {
            let c = if rng.gen::<f64>() < 0.8 { l } else { 1 - l };
            p.set(i, c, 0.7);
            p.set(i, 1 - c, 0.3);
        }
        let single = accuracy(&p, &y);
        let outs = vec![BaseOutput::new("a", p.clone()), BaseOutput::new("b", p)];
        for kind in [MetaModelKind::Glm, MetaModelKind::Gbm] {
            let s = stack_fit(&outs, &y, kind).unwrap();
            assert!(accuracy(&stack_predict(&s, &outs).unwrap(), &y) >= single - 0.01);
        }
    }

    #[test]
    fn stacking_errors() {
        let a = BaseOutput::new("a", Matrix::zeros(3, 2));
        assert!(matches!(stack_fit(std::slice::from_ref(&a), &[0, 1, 0], MetaModelKind::Glm), Err(EnsembleError::TooFewModels(1))));
        assert!(matches!(
            stack_fit(&[a.clone(), a], &[0, 1], MetaModelKind::Glm),
            Err(EnsembleError::RowMismatch { .. })
        ));
    }
}
