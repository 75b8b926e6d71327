use serde::Serialize;

use super::{LabeledScores, MetricError};
use crate::scalar::Scalar;

/// The detector: `true` (real) iff `score >= tau`.
pub fn detect<F: Scalar>(scores: &[F], tau: F) -> Vec<bool> {
    scores.iter().map(|&s| s >= tau).collect()
}

/// Detection quality at one threshold. Ratios with an empty denominator are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub precision_real: f64,
    pub precision_halluc: f64,
    /// Recall of the real class.
    pub recall: f64,
    /// F1 of the real class.
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn report_at<F: Scalar>(ls: &LabeledScores<F>, tau: F) -> ThresholdReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&pred, &real) in detect(ls.scores(), tau).iter().zip(ls.labels()) {
        match (pred, real) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    ThresholdReport {
        threshold: tau.to_f64_lossy(),
        accuracy: ratio(tp + tn, ls.len()),
        precision_real: ratio(tp, tp + fp),
        precision_halluc: ratio(tn, tn + fn_),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// Threshold maximizing the real-class F1.
///
/// Candidates are the midpoints of adjacent distinct scores plus
/// `min - 1` and `max + 1`; the smallest maximizer wins.
pub fn calibrate_threshold_f1<F: Scalar>(
    ls: &LabeledScores<F>,
) -> Result<(F, ThresholdReport), MetricError> {
    ls.require_both()?;
    let mut pairs: Vec<(F, bool)> = ls
        .scores()
        .iter()
        .copied()
        .zip(ls.labels().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite scores"));
    let sorted: Vec<F> = pairs.iter().map(|p| p.0).collect();
    // reals_from[i] = number of real objects among sorted[i..]
    let mut reals_from = vec![0usize; pairs.len() + 1];
    for i in (0..pairs.len()).rev() {
        reals_from[i] = reals_from[i + 1] + usize::from(pairs[i].1);
    }
    let n_real = ls.n_real();

    let mut distinct = sorted.clone();
    distinct.dedup();
    let two = F::one() + F::one();
    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0] - F::one());
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / two));
    candidates.push(distinct[distinct.len() - 1] + F::one());

    let mut best: Option<(F, usize, usize)> = None; // (tau, 2tp, 2tp+fp+fn)
    for tau in candidates {
        let first = sorted.partition_point(|&s| s < tau);
        let predicted = sorted.len() - first;
        let tp = reals_from[first];
        let fp = predicted - tp;
        let fn_ = n_real - tp;
        let (num, den) = (2 * tp, 2 * tp + fp + fn_);
        let better = match best {
            None => true,
            // num/den > bnum/bden, compared exactly
            Some((_, bnum, bden)) => {
                (num as u128) * (bden as u128) > (bnum as u128) * (den as u128)
            }
        };
        if better {
            best = Some((tau, num, den));
        }
    }
    let (tau, _, _) = best.expect("at least two candidates");
    Ok((tau, report_at(ls, tau)))
}
