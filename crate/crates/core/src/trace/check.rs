use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{ModelPack, SampleTrace, SectionName, TraceBundle};

/// One invariant violation found in a bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// `pack`, `samples/<id>` or a file path inside the bundle.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// All violations found in a bundle. Empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            message: message.into(),
        });
    }

    pub(crate) fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Sample ids double as directory names.
pub(crate) fn is_valid_sample_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn count_non_finite(values: &[f32]) -> usize {
    values.iter().filter(|v| !v.is_finite()).count()
}

pub fn check_pack(pack: &ModelPack) -> ValidationReport {
    let mut report = ValidationReport::default();
    let loc = "pack";
    if pack.model_id.is_empty() {
        report.push(loc, "empty model_id");
    }
    if pack.hidden_dim == 0 {
        report.push(loc, "hidden_dim must be positive");
    }
    if pack.vocab_size == 0 {
        report.push(loc, "vocab_size must be positive");
    }
    if pack.layer_count == 0 {
        report.push(loc, "layer_count must be at least 1");
    }
    if pack.unembed.shape() != (pack.vocab_size, pack.hidden_dim) {
        report.push(
            loc,
            format!(
                "unembed shape {:?} does not match (vocab_size, hidden_dim) = ({}, {})",
                pack.unembed.shape(),
                pack.vocab_size,
                pack.hidden_dim
            ),
        );
    }
    if pack.vocab.len() != pack.vocab_size {
        report.push(
            loc,
            format!(
                "vocab lists {} tokens, expected {}",
                pack.vocab.len(),
                pack.vocab_size
            ),
        );
    }
    let bad = count_non_finite(pack.unembed.data());
    if bad > 0 {
        report.push(loc, format!("unembed contains {bad} non-finite values"));
    }
    report
}

/// Section name, actual shape, expected shape, values.
type ShapeCheck<'a> = (&'static str, (usize, usize), (usize, usize), &'a [f32]);

pub fn check_sample(pack: &ModelPack, sample: &SampleTrace) -> ValidationReport {
    let mut report = ValidationReport::default();
    let loc = format!("samples/{}", sample.sample_id);
    let d = pack.hidden_dim;
    let n = sample.n_visual;
    let m = sample.n_generated();

    if !is_valid_sample_id(&sample.sample_id) {
        report.push(&loc, "sample_id must be a non-empty [A-Za-z0-9._-] name");
    }
    if sample.grid.0 * sample.grid.1 != n {
        report.push(
            &loc,
            format!(
                "grid {}x{} does not match visual token count {n}",
                sample.grid.0, sample.grid.1
            ),
        );
    }
    if n == 0 {
        report.push(&loc, "no visual tokens");
    }

    for (&layer, states) in &sample.layers {
        if layer > pack.layer_count {
            report.push(
                &loc,
                format!(
                    "layer out of range: exported layer {layer} exceeds layer_count {}",
                    pack.layer_count
                ),
            );
        }
        let checks: [ShapeCheck; 3] = [
            (
                "visual_hidden",
                states.visual.shape(),
                (n, d),
                states.visual.data(),
            ),
            (
                "prompt_last_hidden",
                (1, states.prompt_last.len()),
                (1, d),
                &states.prompt_last,
            ),
            (
                "gen_hidden",
                states.generated.shape(),
                (m, d),
                states.generated.data(),
            ),
        ];
        for (name, got, want, data) in checks {
            let section = SectionName(name, layer);
            if got != want {
                report.push(
                    &loc,
                    format!("{section} has shape {got:?}, expected {want:?}"),
                );
            }
            let bad = count_non_finite(data);
            if bad > 0 {
                report.push(&loc, format!("{section} contains {bad} non-finite values"));
            }
        }
    }

    let text_len = sample.generated_text.chars().count();
    let mut prev_end = 0usize;
    for (j, tok) in sample.gen_tokens.iter().enumerate() {
        if tok.token_id as usize >= pack.vocab_size {
            report.push(
                &loc,
                format!(
                    "gen token {j} id {} outside vocabulary of {}",
                    tok.token_id, pack.vocab_size
                ),
            );
        }
        if !(tok.logprob.is_finite() && tok.logprob <= 0.0) {
            report.push(
                &loc,
                format!("gen token {j} logprob {} not in (-inf, 0]", tok.logprob),
            );
        }
        if !(tok.entropy.is_finite() && tok.entropy >= 0.0) {
            report.push(
                &loc,
                format!("gen token {j} entropy {} is negative", tok.entropy),
            );
        }
        let (start, end) = tok.char_span;
        if start > end || end > text_len {
            report.push(
                &loc,
                format!(
                    "gen token {j} char_span ({start}, {end}) outside text of length {text_len}"
                ),
            );
        } else if start < prev_end {
            report.push(
                &loc,
                format!(
                    "gen token {j} char_span ({start}, {end}) overlaps or precedes previous span"
                ),
            );
        }
        prev_end = prev_end.max(end);
    }

    for (&layer, values) in &sample.var {
        if layer > pack.layer_count {
            report.push(
                &loc,
                format!(
                    "layer out of range: var layer {layer} exceeds layer_count {}",
                    pack.layer_count
                ),
            );
        }
        if values.len() != m {
            report.push(
                &loc,
                format!(
                    "{} has {} values, expected {m}",
                    SectionName("var", layer),
                    values.len()
                ),
            );
        }
        let outside = values
            .iter()
            .filter(|v| !(v.is_finite() && (0.0..=1.0).contains(*v)))
            .count();
        if outside > 0 {
            report.push(
                &loc,
                format!(
                    "var out of [0,1]: {} has {outside} offending values",
                    SectionName("var", layer)
                ),
            );
        }
    }
    report
}

pub fn check_bundle(bundle: &TraceBundle) -> ValidationReport {
    let mut report = check_pack(&bundle.pack);
    let mut seen = HashSet::new();
    for sample in &bundle.samples {
        if !seen.insert(sample.sample_id.as_str()) {
            report.push(
                format!("samples/{}", sample.sample_id),
                "duplicate sample_id",
            );
        }
        report.extend(check_sample(&bundle.pack, sample));
    }
    report
}
