use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScoreError;
use crate::trace::SampleTrace;

/// Similarity used between embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Cosine,
    /// Negated Euclidean distance, so larger still means more similar.
    L2,
}

/// Scene-level representation compared against the object embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GlobalAnchor {
    /// Hidden state of the last prompt token.
    #[default]
    LastInstructionToken,
    LastImageToken,
    MeanImageTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LocalAggregation {
    #[default]
    Mean,
    /// Weighted by logit-lens probabilities renormalized over the selected patches.
    ProbabilityWeightedMean,
}

/// Which generated token(s) of a multi-token object supply its embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenSelect {
    #[default]
    First,
    Last,
    Mean,
}

/// Patch relevance used to pick the Top-K patches of the local score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Grounding {
    /// Softmax of the visual logit lens at the object token.
    #[default]
    LogitLens,
    /// Cosine similarity between patch and object embeddings.
    CosineSimilarity,
}

/// Every knob of the scoring functions. The fingerprint of this struct is
/// attached to each score record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Layer `l` of the visual and prompt hidden states.
    pub image_layer: usize,
    /// Layer `l'` of the object token embedding.
    pub text_layer: usize,
    pub k: usize,
    /// Weight of the global score in the fusion.
    pub w: f64,
    #[serde(default)]
    pub distance: Distance,
    #[serde(default)]
    pub global_anchor: GlobalAnchor,
    #[serde(default)]
    pub local_aggregation: LocalAggregation,
    #[serde(default)]
    pub token_select: TokenSelect,
    /// Inclusive layer range summed by SVAR.
    pub svar_layer_range: (usize, usize),
    #[serde(default)]
    pub grounding: Grounding,
    /// Experimental: take patch embeddings for the local similarity from this
    /// layer instead of `image_layer` (grounding still uses `image_layer`).
    #[serde(default)]
    pub patch_layer: Option<usize>,
    /// Use raw logit-lens logits instead of softmax probabilities for
    /// internal confidence.
    #[serde(default)]
    pub ic_raw_logits: bool,
}

/// Per-model defaults: layer pair, K and w.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub image_layer: usize,
    pub text_layer: usize,
    pub k: usize,
    pub w: f64,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "llava-1.5-7b",
        image_layer: 32,
        text_layer: 31,
        k: 32,
        w: 0.6,
    },
    Preset {
        name: "llava-1.5-13b",
        image_layer: 40,
        text_layer: 38,
        k: 32,
        w: 0.6,
    },
    Preset {
        name: "minigpt-4",
        image_layer: 32,
        text_layer: 30,
        k: 4,
        w: 0.5,
    },
    Preset {
        name: "shikra",
        image_layer: 30,
        text_layer: 27,
        k: 16,
        w: 0.6,
    },
];

pub const DEFAULT_SVAR_LAYERS: (usize, usize) = (5, 18);

/// Looks up a preset by model id, ignoring case, an `org/` prefix, a `-hf`
/// suffix and the difference between `minigpt-4` and `minigpt4`.
pub fn preset_for(model_id: &str) -> Option<&'static Preset> {
    let id = model_id.to_lowercase();
    let id = id.rsplit('/').next().unwrap_or(&id);
    let id = id
        .strip_suffix("-hf")
        .unwrap_or(id)
        .replace("minigpt4", "minigpt-4");
    PRESETS.iter().find(|p| p.name == id)
}

impl ScoringConfig {
    pub fn new(image_layer: usize, text_layer: usize, k: usize, w: f64) -> Self {
        Self {
            image_layer,
            text_layer,
            k,
            w,
            distance: Distance::Cosine,
            global_anchor: GlobalAnchor::LastInstructionToken,
            local_aggregation: LocalAggregation::Mean,
            token_select: TokenSelect::First,
            svar_layer_range: DEFAULT_SVAR_LAYERS,
            grounding: Grounding::LogitLens,
            patch_layer: None,
            ic_raw_logits: false,
        }
    }

    pub fn from_preset(preset: &Preset) -> Self {
        Self::new(preset.image_layer, preset.text_layer, preset.k, preset.w)
    }

    /// Defaults for a known model, `None` otherwise.
    pub fn for_model(model_id: &str) -> Option<Self> {
        preset_for(model_id).map(Self::from_preset)
    }

    /// Hex digest of the canonical (key-sorted) JSON form.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
    }

    /// Checks parameters that do not depend on a trace.
    pub fn check(&self) -> Result<(), ScoreError> {
        if !(0.0..=1.0).contains(&self.w) {
            return Err(ScoreError::InvalidConfig(format!(
                "w = {} is outside [0, 1]",
                self.w
            )));
        }
        if self.k == 0 {
            return Err(ScoreError::KOutOfRange { k: 0, n: 0 });
        }
        if self.svar_layer_range.0 > self.svar_layer_range.1 {
            return Err(ScoreError::InvalidConfig(format!(
                "svar layer range {:?} is empty",
                self.svar_layer_range
            )));
        }
        Ok(())
    }

    /// Checks layers and K against one trace. SVAR layers are checked by the
    /// SVAR scorer itself.
    pub fn check_against(&self, trace: &SampleTrace) -> Result<(), ScoreError> {
        self.check()?;
        for layer in [self.image_layer, self.text_layer]
            .into_iter()
            .chain(self.patch_layer)
        {
            if trace.layer(layer).is_none() {
                return Err(ScoreError::LayerNotExported(layer));
            }
        }
        if self.k > trace.n_visual {
            return Err(ScoreError::KOutOfRange {
                k: self.k,
                n: trace.n_visual,
            });
        }
        Ok(())
    }
}

/// Scoring methods, in output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Glsim,
    Global,
    Local,
    Nll,
    Entropy,
    InternalConfidence,
    Svar,
    ContextualLens,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Glsim,
        Method::Global,
        Method::Local,
        Method::Nll,
        Method::Entropy,
        Method::InternalConfidence,
        Method::Svar,
        Method::ContextualLens,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Glsim => "glsim",
            Method::Global => "global",
            Method::Local => "local",
            Method::Nll => "nll",
            Method::Entropy => "entropy",
            Method::InternalConfidence => "internal_confidence",
            Method::Svar => "svar",
            Method::ContextualLens => "contextual_lens",
        }
    }

    /// Whether the method compares embeddings (and so depends on the object
    /// token's hidden state).
    pub fn is_similarity(self) -> bool {
        matches!(
            self,
            Method::Glsim | Method::Global | Method::Local | Method::ContextualLens
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}
