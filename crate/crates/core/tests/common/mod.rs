#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use glsim::lexicon::{extract_mentions, label_mentions};
use glsim::synth::{generate, SynthOutput, SynthSpec};
use glsim::trace::{
    GenToken, LayerConvention, LayerStates, Matrix, ModelPack, SampleTrace, UnembedInputTransform,
};
use glsim::{Label, ObjectMention};

pub fn pack(unembed: &[Vec<f32>]) -> ModelPack {
    let d = unembed[0].len();
    ModelPack {
        model_id: "fixture".into(),
        hidden_dim: d,
        vocab_size: unembed.len(),
        layer_count: 32,
        layer_convention: LayerConvention::PostBlock1Based,
        unembed_input_transform: UnembedInputTransform::None,
        unembed: Matrix::from_rows(unembed),
        vocab: (0..unembed.len()).map(|i| format!("t{i}")).collect(),
    }
}

/// A sample whose generated tokens are one character each ("abc...").
pub struct TraceBuilder {
    trace: SampleTrace,
}

impl TraceBuilder {
    pub fn new(token_ids: &[u32]) -> Self {
        let text: String = (0..token_ids.len())
            .map(|i| char::from(b'a' + (i % 26) as u8))
            .collect();
        let gen_tokens = token_ids
            .iter()
            .enumerate()
            .map(|(i, &token_id)| GenToken {
                token_id,
                logprob: -0.5,
                entropy: 1.0,
                char_span: (i, i + 1),
            })
            .collect();
        Self {
            trace: SampleTrace {
                sample_id: "s0".into(),
                image_id: "img0".into(),
                grid: (1, 0),
                n_visual: 0,
                layers: BTreeMap::new(),
                gen_tokens,
                var: BTreeMap::new(),
                generated_text: text,
            },
        }
    }

    pub fn layer(
        mut self,
        l: usize,
        visual: &[Vec<f32>],
        prompt_last: &[f32],
        generated: &[Vec<f32>],
    ) -> Self {
        self.trace.n_visual = visual.len();
        self.trace.grid = (1, visual.len());
        self.trace.layers.insert(
            l,
            LayerStates {
                visual: Matrix::from_rows(visual),
                prompt_last: prompt_last.to_vec(),
                generated: Matrix::from_rows(generated),
            },
        );
        self
    }

    pub fn var(mut self, l: usize, values: &[f32]) -> Self {
        self.trace.var.insert(l, values.to_vec());
        self
    }

    pub fn grid(mut self, rows: usize, cols: usize) -> Self {
        self.trace.grid = (rows, cols);
        self
    }

    pub fn stats(mut self, j: usize, logprob: f32, entropy: f32) -> Self {
        self.trace.gen_tokens[j].logprob = logprob;
        self.trace.gen_tokens[j].entropy = entropy;
        self
    }

    pub fn sample_id(mut self, id: &str) -> Self {
        self.trace.sample_id = id.into();
        self
    }

    pub fn build(self) -> SampleTrace {
        self.trace
    }
}

/// Mention covering generated tokens `start..end` of a [`TraceBuilder`] trace.
pub fn mention(trace: &SampleTrace, start: usize, end: usize) -> ObjectMention {
    ObjectMention {
        sample_id: trace.sample_id.clone(),
        surface: trace.generated_text[start..end].to_string(),
        canonical: format!("obj{start}"),
        token_index: start,
        first_token_id: trace.gen_tokens[start].token_id,
        char_span: (start, end),
        label: Label::Unlabeled,
    }
}

/// Generates a synthetic bundle and its labeled mentions.
pub fn synth_with_mentions(spec: &SynthSpec) -> (SynthOutput, Vec<ObjectMention>) {
    let out = generate(spec).expect("valid spec");
    let mut mentions = Vec::new();
    for s in &out.bundle.samples {
        let found = extract_mentions(s, &out.lexicon).expect("synthetic captions align");
        mentions.extend(label_mentions(&found, &out.annotations, &s.image_id).expect("annotated"));
    }
    (out, mentions)
}

/// Seeded random rows for hand fixtures, uniform in [-1, 1).
pub struct Rows(pub ChaCha8Rng);

impl Rows {
    pub fn seeded(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn vec(&mut self, d: usize) -> Vec<f32> {
        (0..d).map(|_| self.0.random_range(-1.0f32..1.0)).collect()
    }

    pub fn rows(&mut self, n: usize, d: usize) -> Vec<Vec<f32>> {
        (0..n).map(|_| self.vec(d)).collect()
    }
}

/// Pairwise AUROC: P(real > halluc) with ties counted half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// AUPR with real as positive: walk every distinct score as a threshold,
/// from high to low, summing precision times the recall gained.
pub fn threshold_aupr(scores: &[f64], labels: &[bool]) -> f64 {
    let n_real = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for tau in thresholds {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= tau {
                predicted += 1.0;
                if l {
                    tp += 1.0;
                }
            }
        }
        let recall = tp / n_real;
        area += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    area
}

/// Word-piece style tokens: leading whitespace attaches to the next word or
/// punctuation mark. Token ids are `1000 + index`.
pub fn caption_trace(sample_id: &str, caption: &str) -> SampleTrace {
    let chars: Vec<char> = caption.chars().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        if i == chars.len() {
            break;
        }
        if chars[i].is_alphanumeric() {
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
        } else {
            i += 1;
        }
        spans.push((start, i));
    }
    let ids: Vec<u32> = (0..spans.len() as u32).map(|j| 1000 + j).collect();
    let mut trace = TraceBuilder::new(&ids).sample_id(sample_id).build();
    trace.generated_text = caption.to_string();
    trace.gen_tokens = spans
        .iter()
        .zip(&ids)
        .map(|(&char_span, &token_id)| GenToken {
            token_id,
            logprob: -0.5,
            entropy: 1.0,
            char_span,
        })
        .collect();
    trace
}
