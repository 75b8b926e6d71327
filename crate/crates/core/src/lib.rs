//! Object hallucination detection for vision-language model traces.
//!
//! A trace bundle holds the hidden states an LVLM produced while
//! captioning images. [`lexicon`] finds object mentions in those captions,
//! [`scoring`] turns each mention into a score where higher means "more
//! likely real", and [`metrics`] evaluates the scores against ground-truth
//! labels. [`synth`] builds synthetic bundles with known structure.

pub mod lexicon;
pub mod metrics;
mod scalar;
pub mod scoring;
pub mod synth;
pub mod trace;

pub use lexicon::{
    extract_mentions, label_mentions, AnnotationSet, Label, LexiconError, ObjectLexicon,
    ObjectMention,
};
pub use metrics::{
    aupr, auroc, calibrate_threshold_f1, detect, evaluate, histogram, sweep, EvalReport,
    LabeledScores, MetricError, SweepAxis, SweepGrid, ThresholdReport,
};
pub use scalar::Scalar;
pub use scoring::{
    glsim_score, score_all, score_mention, Method, ScoreBatch, ScoreError, ScoreRecord,
    ScoringConfig,
};
pub use trace::{
    read_bundle, validate_bundle, write_bundle, Matrix, ModelPack, SampleTrace, TraceBundle,
    TraceError,
};

pub type ScoreRecordF32 = ScoreRecord<f32>;
pub type ScoreRecordF64 = ScoreRecord<f64>;
pub type ScoreBatchF32 = ScoreBatch<f32>;
pub type ScoreBatchF64 = ScoreBatch<f64>;
pub type LabeledScoresF32 = LabeledScores<f32>;
pub type LabeledScoresF64 = LabeledScores<f64>;
