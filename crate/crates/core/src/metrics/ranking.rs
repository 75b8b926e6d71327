use std::cmp::Ordering;

use super::{LabeledScores, MetricError};
use crate::scalar::Scalar;

fn sorted_indices<F: Scalar>(scores: &[F], descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        let ord = scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal);
        if descending {
            ord.reverse()
        } else {
            ord
        }
    });
    idx
}

/// Calls `f(group)` for every run of equal scores in `order`.
fn for_each_tie_group<F: Scalar>(scores: &[F], order: &[usize], mut f: impl FnMut(&[usize])) {
    let mut start = 0;
    while start < order.len() {
        let value = scores[order[start]];
        let len = order[start..]
            .iter()
            .take_while(|&&i| scores[i] == value)
            .count();
        f(&order[start..start + len]);
        start += len;
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks for ties: `P(real > halluc) + P(tie) / 2`.
///
/// Ranks are accumulated as doubled integers so the only rounding is the
/// final division.
pub fn auroc<F: Scalar>(ls: &LabeledScores<F>) -> Result<F, MetricError> {
    ls.require_both()?;
    let order = sorted_indices(ls.scores(), false);
    let mut doubled_rank_sum: u128 = 0;
    let mut position = 0u128;
    for_each_tie_group(ls.scores(), &order, |group| {
        let len = group.len() as u128;
        // average 1-based rank of the group, doubled
        let doubled = 2 * position + 1 + len;
        let reals = group.iter().filter(|&&i| ls.labels()[i]).count() as u128;
        doubled_rank_sum += doubled * reals;
        position += len;
    });
    let n_r = ls.n_real() as u128;
    let n_h = ls.n_halluc() as u128;
    let doubled_u = doubled_rank_sum - n_r * (n_r + 1);
    let value = doubled_u as f64 / (2 * n_r * n_h) as f64;
    Ok(F::from_config(value))
}

/// Area under the precision-recall curve with real objects as positives,
/// as the step-wise sum `sum (R_k - R_{k-1}) P_k` over descending
/// thresholds. Tied scores enter together.
pub fn aupr<F: Scalar>(ls: &LabeledScores<F>) -> Result<F, MetricError> {
    ls.require_both()?;
    let order = sorted_indices(ls.scores(), true);
    let n_r = ls.n_real() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0f64;
    for_each_tie_group(ls.scores(), &order, |group| {
        let reals = group.iter().filter(|&&i| ls.labels()[i]).count();
        tp += reals;
        fp += group.len() - reals;
        if reals > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            area += reals as f64 / n_r * precision;
        }
    });
    Ok(F::from_config(area))
}
