//! Synthetic trace bundles with planted geometry.
//!
//! Every object class gets a unit direction `u_c`, and its caption token's
//! unembedding row is `logit_scale * u_c`. A patch carrying `u_c` therefore
//! dominates the logit lens for that token, and the generated object token
//! (also `u_c` plus noise) is cosine-similar to it. Four scenarios decide
//! what is planted for each mention:
//!
//! | scenario             | patch                       | prompt anchor | label        |
//! |----------------------|-----------------------------|---------------|--------------|
//! | `clean_real`         | `u_c`                       | aligned       | real         |
//! | `clean_halluc`       | none                        | random        | hallucinated |
//! | `context_confound`   | none                        | aligned       | hallucinated |
//! | `lookalike_confound` | `rho u_c + sqrt(1-rho^2) u_o` | random      | hallucinated |
//!
//! With several mentions per image the anchor points at the normalized sum
//! of the aligned classes, so each one is only partly aligned. Class
//! directions are random, not orthogonal, which matters at small `hidden_dim`.
//!
//! Randomness comes from `ChaCha20Rng::seed_from_u64(seed)` (rand 0.9),
//! consumed in a fixed order: class directions, unembedding rows,
//! scenario shuffle, then samples one after another. Normals use
//! `rand_distr::StandardNormal`.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{AnnotationSet, ObjectClass, ObjectLexicon};
use crate::trace::{
    GenToken, LayerConvention, LayerStates, Matrix, ModelPack, SampleTrace, TraceBundle,
    UnembedInputTransform,
};

pub use oracle::{oracle_score, oracle_scores};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("SpecInvalid: {0}")]
    SpecInvalid(String),
}

/// Fractions of mentions generated under each scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub clean_real: f64,
    pub clean_halluc: f64,
    pub context_confound: f64,
    pub lookalike_confound: f64,
}

impl Mix {
    pub const CLEAN: Mix = Mix {
        clean_real: 0.5,
        clean_halluc: 0.5,
        context_confound: 0.0,
        lookalike_confound: 0.0,
    };

    fn fractions(&self) -> [f64; 4] {
        [
            self.clean_real,
            self.clean_halluc,
            self.context_confound,
            self.lookalike_confound,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    CleanReal,
    CleanHalluc,
    ContextConfound,
    LookalikeConfound,
}

impl Scenario {
    const ALL: [Scenario; 4] = [
        Scenario::CleanReal,
        Scenario::CleanHalluc,
        Scenario::ContextConfound,
        Scenario::LookalikeConfound,
    ];

    pub fn is_real(self) -> bool {
        self == Scenario::CleanReal
    }

    fn plants_patch(self) -> bool {
        matches!(self, Scenario::CleanReal | Scenario::LookalikeConfound)
    }

    fn aligns_anchor(self) -> bool {
        matches!(self, Scenario::CleanReal | Scenario::ContextConfound)
    }
}

fn default_model_id() -> String {
    "synthetic".into()
}
fn one() -> usize {
    1
}
fn default_classes() -> usize {
    8
}
fn default_logit_scale() -> f64 {
    12.0
}
fn default_lookalike() -> f64 {
    0.9
}

/// Generator parameters, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Visual tokens per sample.
    pub n_visual: usize,
    /// Grid of the visual tokens; square when `n_visual` is a perfect
    /// square, `1 x n_visual` otherwise.
    #[serde(default)]
    pub grid: Option<(usize, usize)>,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    /// Exported hidden-state layers.
    pub layers: Vec<usize>,
    /// Layers with stored visual attention ratios.
    #[serde(default)]
    pub var_layers: Vec<usize>,
    /// Defaults to the largest exported or var layer.
    #[serde(default)]
    pub layer_count: Option<usize>,
    pub num_samples: usize,
    #[serde(default = "one")]
    pub mentions_per_sample: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    pub mix: Mix,
    /// Weight of the class direction in an aligned prompt anchor.
    pub alpha: f64,
    /// Norm of the Gaussian noise added to every hidden state.
    pub sigma: f64,
    #[serde(default = "one")]
    pub planted_patches: usize,
    /// Cosine between a lookalike patch and the class direction.
    #[serde(default = "default_lookalike")]
    pub lookalike_similarity: f64,
    /// Norm of a class token's unembedding row.
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    /// Spell each object with two tokens instead of one.
    #[serde(default)]
    pub split_objects: bool,
}

impl SynthSpec {
    /// A small spec with every field set to a sensible default.
    pub fn small(seed: u64) -> Self {
        Self {
            seed,
            model_id: default_model_id(),
            n_visual: 16,
            grid: None,
            hidden_dim: 16,
            vocab_size: 64,
            layers: vec![2, 3],
            var_layers: vec![1, 2, 3],
            layer_count: None,
            num_samples: 8,
            mentions_per_sample: 2,
            num_classes: 8,
            mix: Mix::CLEAN,
            alpha: 0.8,
            sigma: 0.0,
            planted_patches: 1,
            lookalike_similarity: default_lookalike(),
            logit_scale: default_logit_scale(),
            split_objects: false,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count.unwrap_or_else(|| {
            self.layers
                .iter()
                .chain(&self.var_layers)
                .copied()
                .max()
                .unwrap_or(0)
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid.unwrap_or_else(|| {
            let side = (self.n_visual as f64).sqrt().round() as usize;
            if side * side == self.n_visual {
                (side, side)
            } else {
                (1, self.n_visual)
            }
        })
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::SpecInvalid(msg));
        let fractions = self.mix.fractions();
        if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return bad("mix fractions must be finite and non-negative".into());
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mix fractions sum to {total}, not 1"));
        }
        if self.hidden_dim < 4 {
            return bad(format!("hidden_dim {} < 4", self.hidden_dim));
        }
        if self.vocab_size < 8 {
            return bad(format!("vocab_size {} < 8", self.vocab_size));
        }
        let words = class_words();
        if self.num_classes == 0 || self.num_classes > words.len() {
            return bad(format!("num_classes must be in 1..={}", words.len()));
        }
        let needed = FILLERS.len() + self.num_classes * if self.split_objects { 2 } else { 1 };
        if self.vocab_size < needed {
            return bad(format!(
                "vocab_size {} < {needed} tokens the captions need",
                self.vocab_size
            ));
        }
        if self.n_visual == 0 {
            return bad("n_visual must be positive".into());
        }
        let (rows, cols) = self.grid();
        if rows * cols != self.n_visual {
            return bad(format!(
                "grid {rows}x{cols} does not hold {} tokens",
                self.n_visual
            ));
        }
        if self.layers.is_empty() {
            return bad("at least one layer must be exported".into());
        }
        let layer_count = self.layer_count();
        if let Some(l) = self
            .layers
            .iter()
            .chain(&self.var_layers)
            .find(|&&l| l == 0 || l > layer_count)
        {
            return bad(format!("layer {l} outside 1..={layer_count}"));
        }
        if self.num_samples == 0 || self.mentions_per_sample == 0 {
            return bad("num_samples and mentions_per_sample must be positive".into());
        }
        if self.mentions_per_sample >= self.num_classes {
            return bad(format!(
                "mentions_per_sample {} needs more than that many classes",
                self.mentions_per_sample
            ));
        }
        if self.planted_patches == 0
            || self.planted_patches * self.mentions_per_sample > self.n_visual
        {
            return bad(format!(
                "{} planted patches per mention do not fit {} visual tokens",
                self.planted_patches, self.n_visual
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad(format!("sigma {} must be finite and >= 0", self.sigma));
        }
        if !(self.lookalike_similarity > 0.0 && self.lookalike_similarity <= 1.0) {
            return bad(format!(
                "lookalike_similarity {} outside (0, 1]",
                self.lookalike_similarity
            ));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return bad(format!("logit_scale {} must be positive", self.logit_scale));
        }
        Ok(())
    }
}

/// The scenario behind one generated mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMention {
    pub sample_id: String,
    pub canonical: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub bundle: TraceBundle,
    pub annotations: AnnotationSet,
    pub lexicon: ObjectLexicon,
    pub planted: Vec<PlantedMention>,
}

const FILLERS: [&str; 5] = ["there", " is", " a", " and", "."];
const THERE: u32 = 0;
const IS: u32 = 1;
const A: u32 = 2;
const AND: u32 = 3;
const PERIOD: u32 = 4;

/// Single-word MSCOCO class names, in lexicon order.
fn class_words() -> Vec<String> {
    ObjectLexicon::mscoco80()
        .classes()
        .iter()
        .map(|c| c.canonical.clone())
        .filter(|c| !c.contains(' ') && c.chars().count() >= 2)
        .collect()
}

struct Gen {
    rng: ChaCha20Rng,
    d: usize,
    sigma: f64,
}

impl Gen {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn unit(&mut self) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..self.d).map(|_| self.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }

    /// `v` plus isotropic noise of expected norm `sigma`, stored as f32.
    fn noisy(&mut self, v: &[f64]) -> Vec<f32> {
        let s = self.sigma / (self.d as f64).sqrt();
        v.iter()
            .map(|&x| {
                let n = if s > 0.0 { s * self.normal() } else { 0.0 };
                (x + n) as f32
            })
            .collect()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn mix_dirs(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

/// Per-scenario mention counts by largest remainder.
fn scenario_counts(mix: &Mix, total: usize) -> [usize; 4] {
    let exact = mix.fractions().map(|f| f * total as f64);
    let mut counts = exact.map(|x| x.floor() as usize);
    let mut remaining = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for i in order {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Entropy of a distribution giving `p` to one token and spreading the
/// rest uniformly over the other `vocab - 1`.
fn entropy_for(p: f64, vocab: usize) -> f64 {
    let rest = 1.0 - p;
    let mut h = if p > 0.0 { -p * p.ln() } else { 0.0 };
    if rest > 0.0 {
        h -= rest * (rest / (vocab - 1) as f64).ln();
    }
    h.max(0.0)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.check()?;
    let d = spec.hidden_dim;
    let n_classes = spec.num_classes;
    let mut g = Gen {
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
        d,
        sigma: spec.sigma,
    };

    let names: Vec<String> = class_words().into_iter().take(n_classes).collect();
    let dirs: Vec<Vec<f64>> = (0..n_classes).map(|_| g.unit()).collect();

    // vocabulary: fillers, class heads, optional class tails, padding
    let head_id = |c: usize| (FILLERS.len() + c) as u32;
    let tail_id = |c: usize| (FILLERS.len() + n_classes + c) as u32;
    let mut vocab: Vec<String> = FILLERS.iter().map(|s| s.to_string()).collect();
    let split_at = |name: &str| name.chars().count().div_ceil(2);
    for name in &names {
        if spec.split_objects {
            vocab.push(format!(
                " {}",
                name.chars().take(split_at(name)).collect::<String>()
            ));
        } else {
            vocab.push(format!(" {name}"));
        }
    }
    if spec.split_objects {
        for name in &names {
            vocab.push(name.chars().skip(split_at(name)).collect());
        }
    }
    while vocab.len() < spec.vocab_size {
        vocab.push(format!("<tok{}>", vocab.len()));
    }
    let mut unembed = Matrix::zeros(spec.vocab_size, d);
    for t in 0..spec.vocab_size {
        let row: Vec<f64> = if (FILLERS.len()..FILLERS.len() + n_classes).contains(&t) {
            dirs[t - FILLERS.len()]
                .iter()
                .map(|x| x * spec.logit_scale)
                .collect()
        } else {
            g.unit()
        };
        for (dst, x) in unembed.row_mut(t).iter_mut().zip(row) {
            *dst = x as f32;
        }
    }
    let pack = ModelPack {
        model_id: spec.model_id.clone(),
        hidden_dim: d,
        vocab_size: spec.vocab_size,
        layer_count: spec.layer_count(),
        layer_convention: LayerConvention::PostBlock1Based,
        unembed_input_transform: UnembedInputTransform::None,
        unembed,
        vocab,
    };

    let total = spec.num_samples * spec.mentions_per_sample;
    let counts = scenario_counts(&spec.mix, total);
    let mut scenarios: Vec<Scenario> = Scenario::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&s, n)| std::iter::repeat_n(s, n))
        .collect();
    scenarios.shuffle(&mut g.rng);

    let layers: BTreeSet<usize> = spec.layers.iter().copied().collect();
    let var_layers: BTreeSet<usize> = spec.var_layers.iter().copied().collect();
    let width = spec.num_samples.saturating_sub(1).to_string().len().max(5);
    let mut samples = Vec::with_capacity(spec.num_samples);
    let mut annotations = AnnotationSet::default();
    let mut planted = Vec::with_capacity(total);

    for s in 0..spec.num_samples {
        let sample_id = format!("s{s:0width$}");
        let image_id = format!("img{s:0width$}");
        let m = spec.mentions_per_sample;
        let classes: Vec<usize> = index::sample(&mut g.rng, n_classes, m).into_vec();
        let scen = &scenarios[s * m..(s + 1) * m];
        let others: Vec<usize> = (0..n_classes).filter(|c| !classes.contains(c)).collect();

        // patch directions planted for this image, fixed across layers
        let positions =
            index::sample(&mut g.rng, spec.n_visual, m * spec.planted_patches).into_vec();
        let mut plants: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (i, (&c, &sc)) in classes.iter().zip(scen).enumerate() {
            if !sc.plants_patch() {
                continue;
            }
            let dir = if sc == Scenario::LookalikeConfound {
                let other = others[g.rng.random_range(0..others.len())];
                let rho = spec.lookalike_similarity;
                normalize(mix_dirs(
                    &dirs[c],
                    rho,
                    &dirs[other],
                    (1.0 - rho * rho).sqrt(),
                ))
            } else {
                dirs[c].clone()
            };
            for &p in &positions[i * spec.planted_patches..(i + 1) * spec.planted_patches] {
                plants.insert(p, dir.clone());
            }
        }
        let aligned: Vec<usize> = classes
            .iter()
            .zip(scen)
            .filter(|(_, sc)| sc.aligns_anchor())
            .map(|(&c, _)| c)
            .collect();
        let anchor_dir = if aligned.is_empty() {
            None
        } else {
            let mut sum = vec![0.0; d];
            for &c in &aligned {
                for (a, x) in sum.iter_mut().zip(&dirs[c]) {
                    *a += x;
                }
            }
            Some(normalize(sum))
        };

        // caption: "there is a X and a Y."
        let mut ids: Vec<u32> = vec![THERE, IS];
        let mut object_of: Vec<Option<usize>> = vec![None, None];
        for (i, &c) in classes.iter().enumerate() {
            if i > 0 {
                ids.push(AND);
                object_of.push(None);
            }
            ids.push(A);
            object_of.push(None);
            ids.push(head_id(c));
            object_of.push(Some(i));
            if spec.split_objects {
                ids.push(tail_id(c));
                object_of.push(Some(i));
            }
        }
        ids.push(PERIOD);
        object_of.push(None);
        let n_gen = ids.len();

        let mut text = String::new();
        let mut spans = Vec::with_capacity(n_gen);
        let mut pos = 0;
        for &id in &ids {
            let piece = &pack.vocab[id as usize];
            let len = piece.chars().count();
            spans.push((pos, pos + len));
            pos += len;
            text.push_str(piece);
        }

        let mut layer_states = BTreeMap::new();
        for &l in &layers {
            let mut visual = Vec::with_capacity(spec.n_visual);
            for p in 0..spec.n_visual {
                let dir = match plants.get(&p) {
                    Some(dir) => dir.clone(),
                    None => g.unit(),
                };
                visual.push(g.noisy(&dir));
            }
            let r = g.unit();
            let anchor = match &anchor_dir {
                Some(a) => mix_dirs(a, spec.alpha, &r, (1.0 - spec.alpha * spec.alpha).sqrt()),
                None => r,
            };
            let prompt_last = g.noisy(&anchor);
            let mut generated = Vec::with_capacity(n_gen);
            for obj in &object_of {
                let dir = match obj {
                    Some(i) => dirs[classes[*i]].clone(),
                    None => g.unit(),
                };
                generated.push(g.noisy(&dir));
            }
            layer_states.insert(
                l,
                LayerStates {
                    visual: Matrix::from_rows(&visual),
                    prompt_last,
                    generated: Matrix::from_rows(&generated),
                },
            );
        }

        let mut gen_tokens = Vec::with_capacity(n_gen);
        for (j, &id) in ids.iter().enumerate() {
            let lp = match object_of[j].map(|i| scen[i]) {
                Some(Scenario::CleanReal) => -g.uniform(0.0, 1.5),
                Some(_) => -g.uniform(0.5, 3.0),
                None => -g.uniform(0.0, 0.5),
            };
            gen_tokens.push(GenToken {
                token_id: id,
                logprob: lp as f32,
                entropy: entropy_for(lp.exp(), spec.vocab_size) as f32,
                char_span: spans[j],
            });
        }

        let mut var = BTreeMap::new();
        for &l in &var_layers {
            let values = object_of
                .iter()
                .map(|obj| {
                    let (lo, hi) = match obj.map(|i| scen[i]) {
                        Some(sc) if sc.plants_patch() => (0.3, 0.7),
                        Some(_) => (0.05, 0.45),
                        None => (0.0, 0.3),
                    };
                    g.uniform(lo, hi) as f32
                })
                .collect();
            var.insert(l, values);
        }

        let mut truth = BTreeSet::new();
        for (&c, &sc) in classes.iter().zip(scen) {
            if sc.is_real() {
                truth.insert(names[c].clone());
            }
            planted.push(PlantedMention {
                sample_id: sample_id.clone(),
                canonical: names[c].clone(),
                scenario: sc,
            });
        }
        annotations.images.insert(image_id.clone(), truth);

        samples.push(SampleTrace {
            sample_id,
            image_id,
            grid: spec.grid(),
            n_visual: spec.n_visual,
            layers: layer_states,
            gen_tokens,
            var,
            generated_text: text,
        });
    }

    let lexicon = ObjectLexicon::new(
        names
            .iter()
            .map(|n| ObjectClass {
                canonical: n.clone(),
                synonyms: BTreeSet::new(),
            })
            .collect(),
    )
    .expect("class words are distinct");

    Ok(SynthOutput {
        bundle: TraceBundle {
            pack,
            samples,
            annotations_ref: Some("annotations.json".into()),
        },
        annotations,
        lexicon,
        planted,
    })
}
