//! Trace container: the model pack plus per-sample hidden-state exports.
//!
//! Everything downstream (mention extraction, scoring, evaluation) consumes
//! only the types defined here. The on-disk layout lives in [`container`].

mod check;
mod container;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{check_bundle, check_pack, check_sample, ValidationReport, Violation};
pub use container::{
    read_bundle, validate_bundle, write_bundle, write_bundle_unchecked, FORMAT_VERSION,
    SECTION_ALIGN,
};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic in {0}")]
    BadMagic(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("unsupported format version {0:?}")]
    UnsupportedVersion(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl TraceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TraceError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Wraps `data`; returns `None` when its length is not `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Option<Self> {
        (rows.checked_mul(cols)? == data.len()).then_some(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        // chunks_exact panics on zero width
        (0..self.rows).map(move |i| self.row(i))
    }
}

/// How layer indices are numbered in a pack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerConvention {
    /// Index `k` is the hidden state after decoder block `k`; 0 is the input embedding.
    #[default]
    PostBlock1Based,
}

/// Whether the extractor applied the final normalization before export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UnembedInputTransform {
    #[default]
    None,
    FinalNormApplied,
}

/// Per-model constants shared by every sample of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPack {
    pub model_id: String,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub layer_count: usize,
    pub layer_convention: LayerConvention,
    pub unembed_input_transform: UnembedInputTransform,
    /// Unembedding matrix, one row per vocabulary token (`|V| x d`).
    pub unembed: Matrix,
    /// Token surfaces indexed by token id.
    pub vocab: Vec<String>,
}

impl ModelPack {
    pub fn token_surface(&self, token_id: u32) -> Option<&str> {
        self.vocab.get(token_id as usize).map(String::as_str)
    }
}

/// One generated token with its decoding statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenToken {
    pub token_id: u32,
    /// Log-probability of the chosen token, `<= 0`.
    pub logprob: f32,
    /// Entropy of the full next-token distribution at this step, `>= 0`.
    pub entropy: f32,
    /// Half-open character range (Unicode scalar values) in the generated text.
    pub char_span: (usize, usize),
}

/// Hidden states exported at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStates {
    /// `N x d`, one row per visual token.
    pub visual: Matrix,
    /// Hidden state of the final prompt token, length `d`.
    pub prompt_last: Vec<f32>,
    /// `M x d`, one row per generated token.
    pub generated: Matrix,
}

/// Everything exported for one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTrace {
    pub sample_id: String,
    pub image_id: String,
    /// `(rows, cols)` of the visual token grid; `rows * cols == n_visual`.
    pub grid: (usize, usize),
    pub n_visual: usize,
    pub layers: BTreeMap<usize, LayerStates>,
    pub gen_tokens: Vec<GenToken>,
    /// Head-averaged visual attention ratio per layer, one value per generated token.
    pub var: BTreeMap<usize, Vec<f32>>,
    pub generated_text: String,
}

impl SampleTrace {
    pub fn n_generated(&self) -> usize {
        self.gen_tokens.len()
    }

    pub fn exported_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers.keys().copied()
    }

    pub fn var_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.var.keys().copied()
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerStates> {
        self.layers.get(&layer)
    }

    /// Indices of tokens whose character span overlaps `[start, end)`.
    pub fn tokens_overlapping(&self, start: usize, end: usize) -> std::ops::Range<usize> {
        let first = self
            .gen_tokens
            .iter()
            .position(|t| t.char_span.1 > start && t.char_span.0 < end);
        match first {
            Some(first) => {
                let len = self.gen_tokens[first..]
                    .iter()
                    .take_while(|t| t.char_span.0 < end)
                    .count();
                first..first + len
            }
            None => 0..0,
        }
    }
}

/// A model pack with its samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    pub pack: ModelPack,
    pub samples: Vec<SampleTrace>,
    /// Path of the ground-truth annotation file, relative to the bundle root.
    pub annotations_ref: Option<String>,
}

impl TraceBundle {
    pub fn sample(&self, sample_id: &str) -> Option<&SampleTrace> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }
}

/// Section name for a per-layer tensor, e.g. `visual_hidden/layer_32`.
pub(crate) struct SectionName<'a>(pub &'a str, pub usize);

impl fmt::Display for SectionName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/layer_{}", self.0, self.1)
    }
}
