use serde::Serialize;

use super::{LabeledScores, MetricError};
use crate::scalar::Scalar;

/// Equal-width per-class score histogram over `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    /// `bins + 1` edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub count_real: Vec<usize>,
    pub count_halluc: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_real,count_halluc\n");
        for (i, (r, h)) in self.count_real.iter().zip(&self.count_halluc).enumerate() {
            out.push_str(&format!(
                "{},{},{r},{h}\n",
                self.edges[i],
                self.edges[i + 1]
            ));
        }
        out
    }
}

pub fn histogram<F: Scalar>(ls: &LabeledScores<F>, bins: usize) -> Result<Histogram, MetricError> {
    if bins == 0 {
        return Err(MetricError::NoBins);
    }
    let values: Vec<f64> = ls.scores().iter().map(|s| s.to_f64_lossy()).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(MetricError::DegenerateRange);
    }
    let width = max - min;
    let edges = (0..=bins)
        .map(|i| {
            if i == bins {
                max
            } else {
                min + width * i as f64 / bins as f64
            }
        })
        .collect();
    let mut count_real = vec![0; bins];
    let mut count_halluc = vec![0; bins];
    for (&v, &real) in values.iter().zip(ls.labels()) {
        let bin = (((v - min) / width * bins as f64) as usize).min(bins - 1);
        if real {
            count_real[bin] += 1;
        } else {
            count_halluc[bin] += 1;
        }
    }
    Ok(Histogram {
        edges,
        count_real,
        count_halluc,
    })
}
