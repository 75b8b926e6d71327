//! Naive reference scorers, written without the optimized kernels: full
//! two-pass softmax per patch, full sorts, explicit loops, all in f64.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::lexicon::ObjectMention;
use crate::scoring::{
    Distance, GlobalAnchor, Grounding, LocalAggregation, Method, ScoreBatch, ScoreError,
    ScoreFailure, ScoreRecord, ScoringConfig, TokenSelect,
};
use crate::trace::{LayerStates, ModelPack, SampleTrace, TraceBundle};

fn to_f64(v: &[f32]) -> Vec<f64> {
    let mut out = Vec::new();
    for &x in v {
        out.push(x as f64);
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / na / nb)
    }
}

fn similarity(a: &[f64], b: &[f64], distance: Distance) -> Result<f64, ScoreError> {
    match distance {
        Distance::Cosine => {
            cosine(a, b).ok_or_else(|| ScoreError::DegenerateEmbedding("oracle".into()))
        }
        Distance::L2 => {
            let mut s = 0.0;
            for i in 0..a.len() {
                s += (a[i] - b[i]) * (a[i] - b[i]);
            }
            Ok(-s.sqrt())
        }
    }
}

fn logits(h: &[f64], pack: &ModelPack) -> Vec<f64> {
    let mut z = Vec::new();
    for t in 0..pack.vocab_size {
        z.push(dot(h, &to_f64(pack.unembed.row(t))));
    }
    z
}

fn softmax_prob(h: &[f64], pack: &ModelPack, token: usize) -> f64 {
    let z = logits(h, pack);
    let mut max = f64::NEG_INFINITY;
    for &x in &z {
        if x > max {
            max = x;
        }
    }
    let mut total = 0.0;
    for &x in &z {
        total += (x - max).exp();
    }
    (z[token] - max).exp() / total
}

fn layer(trace: &SampleTrace, l: usize) -> Result<&LayerStates, ScoreError> {
    trace.layers.get(&l).ok_or(ScoreError::LayerNotExported(l))
}

fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn object_embedding(
    trace: &SampleTrace,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<Vec<f64>, ScoreError> {
    let states = layer(trace, cfg.text_layer)?;
    let (start, end) = mention.char_span;
    let mut tokens = vec![mention.token_index];
    for j in mention.token_index + 1..trace.gen_tokens.len() {
        let (a, b) = trace.gen_tokens[j].char_span;
        if a < end && b > start {
            tokens.push(j);
        }
    }
    let pick = match cfg.token_select {
        TokenSelect::First => vec![tokens[0]],
        TokenSelect::Last => vec![tokens[tokens.len() - 1]],
        TokenSelect::Mean => tokens,
    };
    let mut acc = vec![0.0; states.generated.cols()];
    for &j in &pick {
        let row = to_f64(states.generated.row(j));
        for i in 0..acc.len() {
            acc[i] += row[i];
        }
    }
    for a in acc.iter_mut() {
        *a /= pick.len() as f64;
    }
    Ok(acc)
}

fn vll_probs(
    trace: &SampleTrace,
    pack: &ModelPack,
    l: usize,
    token: usize,
) -> Result<Vec<f64>, ScoreError> {
    let states = layer(trace, l)?;
    let mut probs = Vec::new();
    for i in 0..states.visual.rows() {
        probs.push(softmax_prob(&to_f64(states.visual.row(i)), pack, token));
    }
    Ok(probs)
}

fn local(
    trace: &SampleTrace,
    pack: &ModelPack,
    token: usize,
    e: &[f64],
    cfg: &ScoringConfig,
) -> Result<f64, ScoreError> {
    if cfg.k == 0 || cfg.k > trace.n_visual {
        return Err(ScoreError::KOutOfRange {
            k: cfg.k,
            n: trace.n_visual,
        });
    }
    let sim_layer = layer(trace, cfg.patch_layer.unwrap_or(cfg.image_layer))?;
    let probs = vll_probs(trace, pack, cfg.image_layer, token)?;
    let relevance = match cfg.grounding {
        Grounding::LogitLens => probs.clone(),
        Grounding::CosineSimilarity => {
            let states = layer(trace, cfg.image_layer)?;
            let mut r = Vec::new();
            for i in 0..states.visual.rows() {
                r.push(
                    cosine(&to_f64(states.visual.row(i)), e)
                        .ok_or_else(|| ScoreError::DegenerateEmbedding("oracle".into()))?,
                );
            }
            r
        }
    };
    let top = top_k(&relevance, cfg.k);
    let mut sims = Vec::new();
    for &i in &top {
        sims.push(similarity(
            &to_f64(sim_layer.visual.row(i)),
            e,
            cfg.distance,
        )?);
    }
    match cfg.local_aggregation {
        LocalAggregation::Mean => {
            let mut s = 0.0;
            for x in &sims {
                s += x;
            }
            Ok(s / cfg.k as f64)
        }
        LocalAggregation::ProbabilityWeightedMean => {
            let mut total = 0.0;
            for &i in &top {
                total += probs[i];
            }
            let mut s = 0.0;
            for (n, &i) in top.iter().enumerate() {
                s += probs[i] / total * sims[n];
            }
            Ok(s)
        }
    }
}

fn global(trace: &SampleTrace, e: &[f64], cfg: &ScoringConfig) -> Result<f64, ScoreError> {
    let states = layer(trace, cfg.image_layer)?;
    let anchor = match cfg.global_anchor {
        GlobalAnchor::LastInstructionToken => to_f64(&states.prompt_last),
        GlobalAnchor::LastImageToken => to_f64(states.visual.row(states.visual.rows() - 1)),
        GlobalAnchor::MeanImageTokens => {
            let mut acc = vec![0.0; states.visual.cols()];
            for i in 0..states.visual.rows() {
                let row = to_f64(states.visual.row(i));
                for c in 0..acc.len() {
                    acc[c] += row[c];
                }
            }
            let n = states.visual.rows() as f64;
            acc.iter().map(|a| a / n).collect()
        }
    };
    similarity(&anchor, e, cfg.distance)
}

/// Reference score for one mention; `(layer, patch)` of the internal
/// confidence maximum is not reported here, only its value.
pub fn oracle_score(
    trace: &SampleTrace,
    pack: &ModelPack,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
    method: Method,
) -> Result<f64, ScoreError> {
    cfg.check()?;
    let j = mention.token_index;
    if j >= trace.gen_tokens.len() {
        return Err(ScoreError::TokenIndexOutOfRange {
            index: j,
            len: trace.gen_tokens.len(),
        });
    }
    let token = trace.gen_tokens[j];
    if token.token_id != mention.first_token_id {
        return Err(ScoreError::MentionMismatch("oracle".into()));
    }
    let t = token.token_id as usize;
    if t >= pack.vocab_size {
        return Err(ScoreError::TokenOutOfRange {
            token: token.token_id,
            vocab: pack.vocab_size,
        });
    }
    match method {
        Method::Nll => Ok(token.logprob as f64),
        Method::Entropy => Ok(-(token.entropy as f64)),
        Method::Svar => {
            let (lo, hi) = cfg.svar_layer_range;
            let mut s = 0.0;
            for l in lo..=hi {
                let v = trace.var.get(&l).ok_or(ScoreError::VarLayerMissing(l))?;
                s += v[j] as f64;
            }
            Ok(s)
        }
        Method::InternalConfidence => {
            let mut best: Option<f64> = None;
            for states in trace.layers.values() {
                for i in 0..states.visual.rows() {
                    let h = to_f64(states.visual.row(i));
                    let v = if cfg.ic_raw_logits {
                        logits(&h, pack)[t]
                    } else {
                        softmax_prob(&h, pack, t)
                    };
                    if best.is_none() || v > best.unwrap() {
                        best = Some(v);
                    }
                }
            }
            best.ok_or(ScoreError::NoVisualLayers)
        }
        Method::Global => global(trace, &object_embedding(trace, mention, cfg)?, cfg),
        Method::Local => local(trace, pack, t, &object_embedding(trace, mention, cfg)?, cfg),
        Method::Glsim => {
            let e = object_embedding(trace, mention, cfg)?;
            let g = global(trace, &e, cfg)?;
            let l = local(trace, pack, t, &e, cfg)?;
            Ok(cfg.w * g + (1.0 - cfg.w) * l)
        }
        Method::ContextualLens => {
            let e = object_embedding(trace, mention, cfg)?;
            let states = layer(trace, cfg.image_layer)?;
            let mut best = f64::NEG_INFINITY;
            for i in 0..states.visual.rows() {
                let c = cosine(&to_f64(states.visual.row(i)), &e)
                    .ok_or_else(|| ScoreError::DegenerateEmbedding("oracle".into()))?;
                if c > best {
                    best = c;
                }
            }
            Ok(best)
        }
    }
}

/// Reference counterpart of [`crate::scoring::score_all`], same ordering.
pub fn oracle_scores(
    bundle: &TraceBundle,
    mentions: &[ObjectMention],
    cfg: &ScoringConfig,
    method: Method,
) -> ScoreBatch<f64> {
    let samples: HashMap<&str, &SampleTrace> = bundle
        .samples
        .iter()
        .map(|s| (s.sample_id.as_str(), s))
        .collect();
    let mut ordered: Vec<&ObjectMention> = mentions.iter().collect();
    ordered.sort_by(|a, b| {
        (a.sample_id.as_str(), a.char_span.0, a.token_index).cmp(&(
            b.sample_id.as_str(),
            b.char_span.0,
            b.token_index,
        ))
    });
    let fingerprint = cfg.fingerprint();
    let results: Vec<Result<ScoreRecord<f64>, ScoreFailure>> = ordered
        .par_iter()
        .map(|m| {
            let score = match samples.get(m.sample_id.as_str()) {
                Some(trace) => oracle_score(trace, &bundle.pack, m, cfg, method),
                None => Err(ScoreError::UnknownSample(m.sample_id.clone())),
            };
            match score {
                Ok(score) => Ok(ScoreRecord {
                    sample_id: m.sample_id.clone(),
                    canonical: m.canonical.clone(),
                    method,
                    score,
                    config_fingerprint: fingerprint.clone(),
                    label: m.label,
                }),
                Err(e) => Err(ScoreFailure {
                    sample_id: m.sample_id.clone(),
                    canonical: m.canonical.clone(),
                    method,
                    error: e.to_string(),
                }),
            }
        })
        .collect();
    let mut batch = ScoreBatch {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(r) => batch.records.push(r),
            Err(f) => batch.failures.push(f),
        }
    }
    batch
}
