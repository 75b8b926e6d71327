use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::Args;
use glsim::scoring::{
    Distance, GlobalAnchor, Grounding, LocalAggregation, ScoringConfig, TokenSelect,
};
use glsim::{Method, SweepAxis};
use serde_json::Value;

/// Parses a snake_case or kebab-case enum name through its serde form.
fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated integers, got {s:?}"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?,
        b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?,
    ))
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    if s == "all" {
        return Ok(Method::ALL.to_vec());
    }
    s.split(',')
        .map(|m| m.trim().replace('-', "_").parse())
        .collect()
}

/// Scoring overrides shared by `score`, `sweep` and `ground`.
#[derive(Args, Debug, Clone, Default)]
pub struct ScoringArgs {
    /// Image-token layer and object-token layer, e.g. `32,31`
    #[arg(long, value_parser = parse_pair)]
    pub layers: Option<(usize, usize)>,
    /// Number of grounded patches in the local score
    #[arg(long)]
    pub k: Option<usize>,
    /// Weight of the global score
    #[arg(long)]
    pub w: Option<f64>,
    /// cosine or l2
    #[arg(long, value_parser = parse_enum::<Distance>)]
    pub distance: Option<Distance>,
    /// last_instruction_token, last_image_token or mean_image_tokens
    #[arg(long, value_parser = parse_enum::<GlobalAnchor>)]
    pub anchor: Option<GlobalAnchor>,
    /// mean or probability_weighted_mean
    #[arg(long, value_parser = parse_enum::<LocalAggregation>)]
    pub aggregation: Option<LocalAggregation>,
    /// Token(s) representing a multi-token object: first, last or mean
    #[arg(long, value_parser = parse_enum::<TokenSelect>)]
    pub token_select: Option<TokenSelect>,
    /// Patch relevance: logit_lens or cosine_similarity
    #[arg(long, value_parser = parse_enum::<Grounding>)]
    pub grounding: Option<Grounding>,
    /// Inclusive SVAR layer range, e.g. `5,18`
    #[arg(long, value_parser = parse_pair)]
    pub svar_layers: Option<(usize, usize)>,
    /// Take patch embeddings of the local similarity from this layer
    #[arg(long)]
    pub patch_layer: Option<usize>,
    /// Internal confidence over raw logits instead of probabilities
    #[arg(long)]
    pub ic_raw_logits: bool,
    /// Full scoring config as JSON; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Marks errors that should exit with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl ScoringArgs {
    /// Starting point is `--config`, else the preset for `model_id`; the
    /// layer pair, K and w must be given explicitly for unknown models.
    pub fn resolve(&self, model_id: &str) -> Result<ScoringConfig> {
        let base = match &self.config {
            Some(path) => Some(serde_json::from_str::<ScoringConfig>(
                &std::fs::read_to_string(path)
                    .map_err(|e| anyhow!("reading {}: {e}", path.display()))?,
            )?),
            None => ScoringConfig::for_model(model_id),
        };
        let mut cfg = match base {
            Some(cfg) => cfg,
            None => match (self.layers, self.k, self.w) {
                (Some((l, lt)), Some(k), Some(w)) => ScoringConfig::new(l, lt, k, w),
                _ => {
                    return Err(UsageError(format!(
                        "no preset for model {model_id:?}; pass --layers, --k and --w"
                    ))
                    .into())
                }
            },
        };
        if let Some((l, lt)) = self.layers {
            cfg.image_layer = l;
            cfg.text_layer = lt;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(w) = self.w {
            cfg.w = w;
        }
        if let Some(d) = self.distance {
            cfg.distance = d;
        }
        if let Some(a) = self.anchor {
            cfg.global_anchor = a;
        }
        if let Some(a) = self.aggregation {
            cfg.local_aggregation = a;
        }
        if let Some(t) = self.token_select {
            cfg.token_select = t;
        }
        if let Some(g) = self.grounding {
            cfg.grounding = g;
        }
        if let Some(r) = self.svar_layers {
            cfg.svar_layer_range = r;
        }
        if self.patch_layer.is_some() {
            cfg.patch_layer = self.patch_layer;
        }
        if self.ic_raw_logits {
            cfg.ic_raw_logits = true;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let [start, end, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (start, end, step) = (start?, end?, step?);
        if step.is_nan() || step <= 0.0 || end < start {
            bail!("range {s:?} needs start <= end and a positive step");
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        // rounding keeps 0.1 steps printable as 0.3 rather than 0.30000000000000004
        return Ok((0..=n)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect());
    }
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| anyhow!("{v:?}: {e}")))
        .collect()
}

fn parse_ints(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let [start, end, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<usize>());
        let (start, end, step) = (start?, end?, step?);
        if step == 0 || end < start {
            bail!("range {s:?} needs start <= end and a positive step");
        }
        return Ok((start..=end).step_by(step).collect());
    }
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| anyhow!("{v:?}: {e}")))
        .collect()
}

/// `w=0:1:0.1`, `w=0,0.5,1`, `k=1,2,4`, `k=1:32:1` or
/// `layers=30,31,32x29,30,31` (image layers x text layers).
pub fn parse_axis(s: &str) -> Result<SweepAxis, String> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| format!("axis {s:?} must look like name=values"))?;
    let axis = match name.trim() {
        "w" => parse_floats(values).map(SweepAxis::W),
        "k" => parse_ints(values).map(SweepAxis::K),
        "layers" => {
            let (image, text) = values
                .split_once('x')
                .ok_or_else(|| format!("layer axis {values:?} must look like 30,31x29,30"))?;
            parse_ints(image).and_then(|image_layers| {
                parse_ints(text).map(|text_layers| SweepAxis::LayerMatrix {
                    image_layers,
                    text_layers,
                })
            })
        }
        other => return Err(format!("unknown axis {other:?}; expected w, k or layers")),
    };
    axis.map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes() {
        let SweepAxis::W(w) = parse_axis("w=0:1:0.1").unwrap() else {
            panic!()
        };
        assert_eq!(w.len(), 11);
        assert_eq!(w[3], 0.3);
        assert_eq!(w[10], 1.0);
        assert_eq!(parse_axis("k=1,2,4").unwrap(), SweepAxis::K(vec![1, 2, 4]));
        assert_eq!(
            parse_axis("layers=30,31,32x29,30").unwrap(),
            SweepAxis::LayerMatrix {
                image_layers: vec![30, 31, 32],
                text_layers: vec![29, 30]
            }
        );
        assert!(parse_axis("q=1").is_err());
    }

    #[test]
    fn enums_accept_kebab_case() {
        assert_eq!(
            parse_enum::<GlobalAnchor>("mean-image-tokens").unwrap(),
            GlobalAnchor::MeanImageTokens
        );
        assert!(parse_enum::<Distance>("manhattan").is_err());
    }

    #[test]
    fn unknown_model_needs_flags() {
        let args = ScoringArgs::default();
        assert!(args.resolve("mystery").is_err());
        assert_eq!(args.resolve("llava-1.5-7b").unwrap().k, 32);
        let args = ScoringArgs {
            layers: Some((2, 1)),
            k: Some(4),
            w: Some(0.5),
            ..Default::default()
        };
        assert_eq!(args.resolve("mystery").unwrap().text_layer, 1);
    }
}
