//! Object-level scores: the global-local similarity fusion and the
//! baselines it is compared against.
//!
//! Every scorer is generic over the working precision `F`. Scores are
//! oriented so that higher means "more likely real", which lets every
//! method plug into the same `score >= tau` detector.

mod config;
mod heatmap;
pub mod kernels;
mod methods;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{Label, ObjectMention};
use crate::scalar::Scalar;
use crate::trace::TraceBundle;

pub use config::{
    preset_for, Distance, GlobalAnchor, Grounding, LocalAggregation, Method, Preset, ScoringConfig,
    TokenSelect, DEFAULT_SVAR_LAYERS, PRESETS,
};
pub use heatmap::{grounding_heatmap, Heatmap, PgmBounds};
pub use methods::{
    contextual_lens_score, entropy_score, global_score, glsim_score, internal_confidence_detail,
    internal_confidence_score, local_score, nll_score, object_token_embedding, score_mention,
    span_aggregate_score, svar_score, top_k_patches, visual_logit_lens_probs, InternalConfidence,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("layer {0} is not exported in this trace")]
    LayerNotExported(usize),
    #[error("token id {token} outside vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("generated token index {index} out of range (trace has {len})")]
    TokenIndexOutOfRange { index: usize, len: usize },
    #[error("KOutOfRange: k = {k} must be in 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("zero-norm embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("trace has no visual hidden states")]
    NoVisualLayers,
    #[error("var layer {0} is not exported")]
    VarLayerMissing(usize),
    #[error("empty token span")]
    EmptySpan,
    #[error("grid {rows}x{cols} does not match {n} visual tokens")]
    GridMismatch { rows: usize, cols: usize, n: usize },
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("mention does not match trace: {0}")]
    MentionMismatch(String),
    #[error("unknown sample {0:?}")]
    UnknownSample(String),
}

/// One mention scored by one method under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: DeserializeOwned"))]
pub struct ScoreRecord<F = f64> {
    pub sample_id: String,
    pub canonical: String,
    pub method: Method,
    pub score: F,
    pub config_fingerprint: String,
    pub label: Label,
}

/// A mention/method pair that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub sample_id: String,
    pub canonical: String,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch<F = f64> {
    pub records: Vec<ScoreRecord<F>>,
    pub failures: Vec<ScoreFailure>,
}

/// Scores every mention with every method.
///
/// Output is ordered by sample id, then caption position, then method.
/// Mentions are scored in parallel; failures are collected rather than
/// aborting the batch.
pub fn score_all<F: Scalar>(
    bundle: &TraceBundle,
    mentions: &[ObjectMention],
    cfg: &ScoringConfig,
    methods: &[Method],
) -> ScoreBatch<F> {
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();

    let mut ordered: Vec<&ObjectMention> = mentions.iter().collect();
    ordered.sort_by(|a, b| {
        a.sample_id
            .cmp(&b.sample_id)
            .then(a.char_span.0.cmp(&b.char_span.0))
            .then(a.token_index.cmp(&b.token_index))
    });
    let samples: HashMap<&str, _> = bundle
        .samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s))
        .collect();
    let fingerprint = cfg.fingerprint();

    let results: Vec<Vec<Result<ScoreRecord<F>, ScoreFailure>>> = ordered
        .par_iter()
        .map(|mention| {
            methods
                .iter()
                .map(|&method| {
                    let fail = |e: ScoreError| ScoreFailure {
                        sample_id: mention.sample_id.clone(),
                        canonical: mention.canonical.clone(),
                        method,
                        error: e.to_string(),
                    };
                    let trace = samples.get(mention.sample_id.as_str()).ok_or_else(|| {
                        fail(ScoreError::UnknownSample(mention.sample_id.clone()))
                    })?;
                    let score = score_mention::<F>(trace, &bundle.pack, mention, cfg, method)
                        .map_err(fail)?;
                    Ok(ScoreRecord {
                        sample_id: mention.sample_id.clone(),
                        canonical: mention.canonical.clone(),
                        method,
                        score,
                        config_fingerprint: fingerprint.clone(),
                        label: mention.label,
                    })
                })
                .collect()
        })
        .collect();

    let mut batch = ScoreBatch {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for result in results.into_iter().flatten() {
        match result {
            Ok(r) => batch.records.push(r),
            Err(f) => batch.failures.push(f),
        }
    }
    batch
}

pub fn write_records_jsonl<W: Write, F: Serialize>(
    mut out: W,
    records: &[ScoreRecord<F>],
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead, F: DeserializeOwned>(
    input: R,
) -> Result<Vec<ScoreRecord<F>>, String> {
    let mut records = Vec::new();
    for (no, line) in input.lines().enumerate() {
        let line = line.map_err(|e| format!("line {}: {e}", no + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", no + 1))?);
    }
    Ok(records)
}
