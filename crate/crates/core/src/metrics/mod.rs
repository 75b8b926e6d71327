//! Threshold-free evaluation, the thresholded detector, and the ablation
//! sweep harness.

mod histogram;
mod ranking;
mod report;
mod sweep;
mod threshold;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::scoring::ScoreRecord;

pub use histogram::{histogram, Histogram};
pub use ranking::{aupr, auroc};
pub use report::{evaluate, EvalReport, GroupReport};
pub use sweep::{sweep, SweepAxis, SweepGrid};
pub use threshold::{calibrate_threshold_f1, detect, ThresholdReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("SingleClass: need both classes, got {n_real} real and {n_halluc} hallucinated")]
    SingleClass { n_real: usize, n_halluc: usize },
    #[error("score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("all scores equal; histogram range is degenerate")]
    DegenerateRange,
    #[error("histogram needs at least one bin")]
    NoBins,
}

/// Scores with binary labels (`true` = real object, the positive class).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores<F = f64> {
    scores: Vec<F>,
    labels: Vec<bool>,
    n_real: usize,
}

impl<F: Scalar> LabeledScores<F> {
    pub fn new(pairs: impl IntoIterator<Item = (F, bool)>) -> Result<Self, MetricError> {
        let (scores, labels): (Vec<F>, Vec<bool>) = pairs.into_iter().unzip();
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricError::NonFiniteScore { index });
        }
        let n_real = labels.iter().filter(|&&l| l).count();
        Ok(Self {
            scores,
            labels,
            n_real,
        })
    }

    /// Labeled records only; unlabeled ones are skipped.
    pub fn from_records(records: &[ScoreRecord<F>]) -> Result<Self, MetricError> {
        Self::new(
            records
                .iter()
                .filter_map(|r| r.label.as_bool().map(|l| (r.score, l))),
        )
    }

    pub fn scores(&self) -> &[F] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_halluc(&self) -> usize {
        self.labels.len() - self.n_real
    }

    pub(crate) fn require_both(&self) -> Result<(), MetricError> {
        if self.n_real == 0 || self.n_halluc() == 0 {
            return Err(MetricError::SingleClass {
                n_real: self.n_real,
                n_halluc: self.n_halluc(),
            });
        }
        Ok(())
    }

    /// Same labels, scores mapped through `f`.
    pub fn map_scores(&self, f: impl Fn(F) -> F) -> Result<Self, MetricError> {
        Self::new(
            self.scores
                .iter()
                .map(|&s| f(s))
                .zip(self.labels.iter().copied()),
        )
    }
}
