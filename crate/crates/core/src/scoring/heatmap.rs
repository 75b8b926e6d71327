use serde::Serialize;

use super::config::ScoringConfig;
use super::methods::{mention_target, visual_logit_lens_probs};
use super::{kernels, ScoreError};
use crate::lexicon::ObjectMention;
use crate::scalar::{widen, Scalar};
use crate::trace::{ModelPack, SampleTrace};

/// Patch relevance for one object laid out on the visual token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<F> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major relevance values.
    pub values: Vec<F>,
    /// Row-major, `true` for the Top-K patches.
    pub mask: Vec<bool>,
}

/// Min-max bounds used to quantize a heatmap into 8-bit gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PgmBounds {
    pub min: f64,
    pub max: f64,
}

impl<F: Scalar> Heatmap<F> {
    pub fn get(&self, r: usize, c: usize) -> F {
        self.values[r * self.cols + c]
    }

    pub fn to_rows(&self) -> Vec<Vec<F>> {
        self.values
            .chunks(self.cols.max(1))
            .map(<[F]>::to_vec)
            .collect()
    }

    /// One line per grid row, comma-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.cols.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| v.to_f64_lossy().to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn mask_csv(&self) -> String {
        let mut out = String::new();
        for row in self.mask.chunks(self.cols.max(1)) {
            let cells: Vec<&str> = row.iter().map(|&m| if m { "1" } else { "0" }).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary (P5) PGM, min-max normalized to 0..=255. A constant map is all zeros.
    pub fn to_pgm(&self) -> (Vec<u8>, PgmBounds) {
        let vals: Vec<f64> = self.values.iter().map(|v| v.to_f64_lossy()).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        let mut out = format!("P5\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        out.extend(vals.iter().map(|&v| {
            if span > 0.0 {
                ((v - min) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        }));
        (out, PgmBounds { min, max })
    }
}

/// Patch relevance of `mention` (logit-lens probabilities under the default
/// grounding) reshaped onto the grid, with the Top-K cells marked.
pub fn grounding_heatmap<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<Heatmap<F>, ScoreError> {
    let (rows, cols) = trace.grid;
    if rows * cols != trace.n_visual {
        return Err(ScoreError::GridMismatch {
            rows,
            cols,
            n: trace.n_visual,
        });
    }
    cfg.check()?;
    let target = mention_target::<F>(trace, mention, cfg)?;
    let values = match cfg.grounding {
        super::Grounding::LogitLens => {
            visual_logit_lens_probs(trace, pack, cfg.image_layer, mention.first_token_id)?
        }
        super::Grounding::CosineSimilarity => trace
            .layer(cfg.image_layer)
            .ok_or(ScoreError::LayerNotExported(cfg.image_layer))?
            .visual
            .iter_rows()
            .map(|row| kernels::cosine(&widen::<F>(row), &target.embedding).unwrap_or(F::zero()))
            .collect(),
    };
    let top = super::top_k_patches(&values, cfg.k)?;
    let mut mask = vec![false; values.len()];
    for i in top {
        mask[i] = true;
    }
    Ok(Heatmap {
        rows,
        cols,
        values,
        mask,
    })
}
