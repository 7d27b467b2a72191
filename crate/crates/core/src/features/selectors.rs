//! Column selectors. Both fit on the rows flagged in `fit_mask` only.

use super::{FeatureError, Result};
use crate::ensemble::{gbm_fit, GbmParams};
use crate::matrix::Matrix;

fn fit_rows(fit_mask: &[bool]) -> Vec<usize> {
    fit_mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// Columns that are not constant over the fit rows.
pub fn select_filter_constant(x: &Matrix, fit_mask: &[bool]) -> Result<Vec<usize>> {
    let rows = fit_rows(fit_mask);
    let keep: Vec<usize> = (0..x.cols)
        .filter(|&c| {
            let mut vals = rows.iter().map(|&r| x.get(r, c));
            match vals.next() {
                Some(first) => vals.any(|v| v != first),
                None => false,
            }
        })
        .collect();
    if keep.is_empty() {
        return Err(FeatureError::AllConstant);
    }
    Ok(keep)
}

/// The `top_k` columns by boosted-tree split gain, in ascending column order.
///
/// Ranking ties go to the lower column index.
pub fn select_gbdt(x: &Matrix, labels: &[usize], fit_mask: &[bool], top_k: usize, params: &GbmParams) -> Result<Vec<usize>> {
    if top_k == 0 {
        return Err(FeatureError::InvalidParam { step: "gbdt".into(), msg: "top_k must be at least 1".into() });
    }
    if top_k >= x.cols {
        return Ok((0..x.cols).collect());
    }
    let rows = fit_rows(fit_mask);
    let xs = x.select_rows(&rows);
    let ys: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let model = gbm_fit(&xs, &ys, num_classes, params)?;
    let mut order: Vec<usize> = (0..x.cols).collect();
    order.sort_by(|&a, &b| model.importance[b].total_cmp(&model.importance[a]).then(a.cmp(&b)));
    let mut keep = order[..top_k].to_vec();
    keep.sort_unstable();
    Ok(keep)
}
