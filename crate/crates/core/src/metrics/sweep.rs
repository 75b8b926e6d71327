use rayon::prelude::*;
use serde::Serialize;

use super::{auroc, LabeledScores};
use crate::lexicon::ObjectMention;
use crate::scalar::Scalar;
use crate::scoring::{score_all, Method, ScoringConfig};
use crate::trace::TraceBundle;

/// What a sweep varies; everything else comes from the base config.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    K(Vec<usize>),
    W(Vec<f64>),
    /// Every pairing of an image-token layer (rows) with a text layer
    /// (columns).
    LayerMatrix {
        image_layers: Vec<usize>,
        text_layers: Vec<usize>,
    },
}

/// AUROC per sweep cell. Failed cells hold NaN and are explained in
/// `failures`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepGrid {
    /// Header of the first column, e.g. `k` or `image\text`.
    pub corner: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    pub failures: Vec<String>,
}

impl SweepGrid {
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col]
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.corner.clone();
        for c in &self.col_labels {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            out.push_str(label);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn run_cell<F: Scalar>(
    bundle: &TraceBundle,
    mentions: &[ObjectMention],
    cfg: &ScoringConfig,
    method: Method,
) -> Result<f64, String> {
    cfg.check().map_err(|e| e.to_string())?;
    let batch = score_all::<F>(bundle, mentions, cfg, &[method]);
    if let Some(f) = batch.failures.first() {
        return Err(format!(
            "{} failed mention(s), first {}/{}: {}",
            batch.failures.len(),
            f.sample_id,
            f.canonical,
            f.error
        ));
    }
    let ls = LabeledScores::from_records(&batch.records).map_err(|e| e.to_string())?;
    auroc(&ls)
        .map(|a| a.to_f64_lossy())
        .map_err(|e| e.to_string())
}

/// AUROC of `method` over a grid of configurations. Each cell is exactly
/// the standalone run with that configuration.
pub fn sweep<F: Scalar>(
    bundle: &TraceBundle,
    mentions: &[ObjectMention],
    base: &ScoringConfig,
    axis: &SweepAxis,
    method: Method,
) -> SweepGrid {
    let (corner, row_labels, col_labels, configs): (
        String,
        Vec<String>,
        Vec<String>,
        Vec<Vec<ScoringConfig>>,
    ) = match axis {
        SweepAxis::K(ks) => (
            "k".into(),
            vec![method.to_string()],
            ks.iter().map(|k| k.to_string()).collect(),
            vec![ks
                .iter()
                .map(|&k| ScoringConfig { k, ..base.clone() })
                .collect()],
        ),
        SweepAxis::W(ws) => (
            "w".into(),
            vec![method.to_string()],
            ws.iter().map(|w| w.to_string()).collect(),
            vec![ws
                .iter()
                .map(|&w| ScoringConfig { w, ..base.clone() })
                .collect()],
        ),
        SweepAxis::LayerMatrix {
            image_layers,
            text_layers,
        } => (
            "image\\text".into(),
            image_layers.iter().map(|l| l.to_string()).collect(),
            text_layers.iter().map(|l| l.to_string()).collect(),
            image_layers
                .iter()
                .map(|&image_layer| {
                    text_layers
                        .iter()
                        .map(|&text_layer| ScoringConfig {
                            image_layer,
                            text_layer,
                            ..base.clone()
                        })
                        .collect()
                })
                .collect(),
        ),
    };

    let flat: Vec<(usize, usize, &ScoringConfig)> = configs
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, cfg)| (r, c, cfg)))
        .collect();
    let results: Vec<(usize, usize, Result<f64, String>)> = flat
        .par_iter()
        .map(|&(r, c, cfg)| (r, c, run_cell::<F>(bundle, mentions, cfg, method)))
        .collect();

    let mut cells = vec![vec![f64::NAN; col_labels.len()]; row_labels.len()];
    let mut failures = Vec::new();
    for (r, c, result) in results {
        match result {
            Ok(v) => cells[r][c] = v,
            Err(e) => failures.push(format!("{}={}: {e}", row_labels[r], col_labels[c])),
        }
    }
    SweepGrid {
        corner,
        row_labels,
        col_labels,
        cells,
        failures,
    }
}
