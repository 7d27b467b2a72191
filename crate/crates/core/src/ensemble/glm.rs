//! Multinomial logistic regression fit by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_finite, EnsembleError, Result};
use crate::matrix::{softmax_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmParams {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for GlmParams {
    fn default() -> Self {
        Self { l2: 1e-3, lr: 0.1, epochs: 500 }
    }
}

/// Affine map from features to class scores. The last row of `weights`
/// is the (unregularized) bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub weights: Matrix,
    pub l2: f64,
    /// Objective value before each epoch's update, plus the final value.
    pub loss_history: Vec<f64>,
}

fn scores(w: &Matrix, x: &Matrix) -> Matrix {
    let d = x.cols;
    let c = w.cols;
    let mut s = Matrix::zeros(x.rows, c);
    for r in 0..x.rows {
        let out = s.row_mut(r);
        out.copy_from_slice(w.row(d));
        for (j, &xv) in x.row(r).iter().enumerate() {
            if xv != 0.0 {
                for (o, &wv) in out.iter_mut().zip(w.row(j)) {
                    *o += xv * wv;
                }
            }
        }
    }
    s
}

fn objective(w: &Matrix, p: &Matrix, y: &[usize], l2: f64) -> f64 {
    let n = y.len() as f64;
    let ce: f64 = y.iter().enumerate().map(|(i, &c)| -p.get(i, c).max(1e-300).ln()).sum::<f64>() / n;
    let d = w.rows - 1;
    let reg: f64 = w.data[..d * w.cols].iter().map(|v| v * v).sum();
    ce + 0.5 * l2 * reg
}

/// Minimizes mean cross-entropy plus `l2/2 · ‖W‖²` from a zero start.
///
/// The penalty enters through its proximal step, `W ← (W − lr·∇CE) / (1 + lr·l2)`,
/// so very large `l2` shrinks the weights instead of diverging.
pub fn glm_fit(x: &Matrix, y: &[usize], num_classes: usize, params: &GlmParams) -> Result<GlmModel> {
    if x.rows != y.len() {
        return Err(EnsembleError::RowMismatch { expected: x.rows, got: y.len() });
    }
    if x.rows == 0 {
        return Err(EnsembleError::Empty);
    }
    check_finite(x)?;
    let c = num_classes.max(y.iter().max().map_or(1, |m| m + 1));
    let d = x.cols;
    let n = x.rows as f64;
    let mut w = Matrix::zeros(d + 1, c);
    let mut history = Vec::with_capacity(params.epochs + 1);
    let shrink = 1.0 / (1.0 + params.lr * params.l2);
    for _ in 0..params.epochs {
        let p = softmax_rows(&scores(&w, x));
        history.push(objective(&w, &p, y, params.l2));
        let mut grad = Matrix::zeros(d + 1, c);
        for r in 0..x.rows {
            let mut delta = p.row(r).to_vec();
            delta[y[r]] -= 1.0;
            for (j, &xv) in x.row(r).iter().enumerate() {
                if xv != 0.0 {
                    for (g, dv) in grad.row_mut(j).iter_mut().zip(&delta) {
                        *g += xv * dv;
                    }
                }
            }
            for (g, dv) in grad.row_mut(d).iter_mut().zip(&delta) {
                *g += dv;
            }
        }
        for (i, (wv, g)) in w.data.iter_mut().zip(&grad.data).enumerate() {
            *wv -= params.lr * g / n;
            if i < d * c {
                *wv *= shrink;
            }
        }
    }
    let p = softmax_rows(&scores(&w, x));
    history.push(objective(&w, &p, y, params.l2));
    Ok(GlmModel { weights: w, l2: params.l2, loss_history: history })
}

pub fn glm_predict(model: &GlmModel, x: &Matrix) -> Result<Matrix> {
    if x.cols + 1 != model.weights.rows {
        return Err(EnsembleError::ColMismatch { expected: model.weights.rows - 1, got: x.cols });
    }
    check_finite(x)?;
    Ok(softmax_rows(&scores(&model.weights, x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable() -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let c = i % 2;
            let shift = if c == 0 { -1.0 } else { 1.0 };
            rows.push(vec![shift + rng.gen_range(-0.5..0.5), shift + rng.gen_range(-0.5..0.5)]);
            y.push(c);
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn separable_fits_exactly() {
        let (x, y) = separable();
        let m = glm_fit(&x, &y, 2, &GlmParams::default()).unwrap();
        let p = glm_predict(&m, &x).unwrap();
        assert_eq!(p.argmax_rows(), y);
    }

    #[test]
    fn loss_nonincreasing() {
        let (x, y) = separable();
        let m = glm_fit(&x, &y, 2, &GlmParams::default()).unwrap();
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn heavy_l2_gives_priors() {
        let (x, _) = separable();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i % 4 == 0)).collect();
        let m = glm_fit(&x, &y, 2, &GlmParams { l2: 1e6, ..Default::default() }).unwrap();
        let d = x.cols;
        assert!(m.weights.data[..d * 2].iter().all(|v| v.abs() < 1e-2));
        let p = glm_predict(&m, &x).unwrap();
        for r in 0..x.rows {
            assert!((p.get(r, 1) - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn zero_features_symmetric_uniform() {
        let x = Matrix::zeros(4, 3);
        let m = glm_fit(&x, &[0, 1, 0, 1], 2, &GlmParams::default()).unwrap();
        let p = glm_predict(&m, &x).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn non_finite_rejected() {
        let x = Matrix::from_rows(&[vec![f64::INFINITY]]);
        assert!(matches!(glm_fit(&x, &[0], 2, &GlmParams::default()), Err(EnsembleError::NonFinite)));
    }
}
