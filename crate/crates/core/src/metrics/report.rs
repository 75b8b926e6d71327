use std::collections::BTreeMap;

use serde::Serialize;

use super::{aupr, auroc, calibrate_threshold_f1, LabeledScores, ThresholdReport};
use crate::lexicon::Label;
use crate::scalar::Scalar;
use crate::scoring::{Method, ScoreRecord};

/// Metrics for one (method, configuration) group of score records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub method: Method,
    pub config_fingerprint: String,
    pub n_real: usize,
    pub n_halluc: usize,
    pub n_unlabeled: usize,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1_calibration: Option<ThresholdReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub groups: Vec<GroupReport>,
}

impl EvalReport {
    pub fn group(&self, method: Method) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.method == method)
    }
}

/// Groups records by method and configuration fingerprint and computes
/// AUROC/AUPR (and optionally the F1-calibrated detector) for each.
pub fn evaluate<F: Scalar>(records: &[ScoreRecord<F>], calibrate_f1: bool) -> EvalReport {
    let mut groups: BTreeMap<(Method, &str), Vec<ScoreRecord<F>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method, r.config_fingerprint.as_str()))
            .or_default()
            .push(r.clone());
    }
    let groups = groups
        .into_iter()
        .map(|((method, fingerprint), recs)| {
            let n_unlabeled = recs.iter().filter(|r| r.label == Label::Unlabeled).count();
            let mut report = GroupReport {
                method,
                config_fingerprint: fingerprint.to_string(),
                n_real: 0,
                n_halluc: 0,
                n_unlabeled,
                auroc: None,
                aupr: None,
                f1_calibration: None,
                error: None,
            };
            let ls = match LabeledScores::from_records(&recs) {
                Ok(ls) => ls,
                Err(e) => {
                    report.error = Some(e.to_string());
                    return report;
                }
            };
            report.n_real = ls.n_real();
            report.n_halluc = ls.n_halluc();
            let metrics = (|| {
                let a = auroc(&ls)?.to_f64_lossy();
                let p = aupr(&ls)?.to_f64_lossy();
                let cal = if calibrate_f1 {
                    Some(calibrate_threshold_f1(&ls)?.1)
                } else {
                    None
                };
                Ok::<_, super::MetricError>((a, p, cal))
            })();
            match metrics {
                Ok((a, p, cal)) => {
                    report.auroc = Some(a);
                    report.aupr = Some(p);
                    report.f1_calibration = cal;
                }
                Err(e) => report.error = Some(e.to_string()),
            }
            report
        })
        .collect();
    EvalReport { groups }
}
