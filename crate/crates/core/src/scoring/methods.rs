use std::ops::Range;

use super::config::{
    Distance, GlobalAnchor, Grounding, LocalAggregation, Method, ScoringConfig, TokenSelect,
};
use super::kernels::{self, cosine, top_k_indices};
use super::ScoreError;
use crate::lexicon::ObjectMention;
use crate::scalar::{widen, Scalar};
use crate::trace::{LayerStates, ModelPack, SampleTrace};

/// The generated token standing in for an object, with its embedding at
/// the text layer.
#[derive(Debug, Clone)]
pub(crate) struct Target<F> {
    pub index: usize,
    pub token_id: u32,
    pub embedding: Vec<F>,
}

fn layer(trace: &SampleTrace, l: usize) -> Result<&LayerStates, ScoreError> {
    trace.layer(l).ok_or(ScoreError::LayerNotExported(l))
}

fn check_mention(trace: &SampleTrace, mention: &ObjectMention) -> Result<(), ScoreError> {
    let m = trace.n_generated();
    let token =
        trace
            .gen_tokens
            .get(mention.token_index)
            .ok_or(ScoreError::TokenIndexOutOfRange {
                index: mention.token_index,
                len: m,
            })?;
    if token.token_id != mention.first_token_id {
        return Err(ScoreError::MentionMismatch(format!(
            "mention {:?} expects token id {} at position {}, trace has {}",
            mention.canonical, mention.first_token_id, mention.token_index, token.token_id
        )));
    }
    Ok(())
}

/// Embedding of the object at layer `text_layer`: the first token's row,
/// the last token's row, or the mean over every token overlapping the
/// mention's character span.
pub fn object_token_embedding<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
    text_layer: usize,
    token_select: TokenSelect,
) -> Result<Vec<F>, ScoreError> {
    check_mention(trace, mention)?;
    let states = layer(trace, text_layer)?;
    let first = mention.token_index;
    let span = trace.tokens_overlapping(mention.char_span.0, mention.char_span.1);
    let span = if span.contains(&first) {
        first..span.end
    } else {
        first..first + 1
    };
    Ok(match token_select {
        TokenSelect::First => widen(states.generated.row(first)),
        TokenSelect::Last => widen(states.generated.row(span.end - 1)),
        TokenSelect::Mean => {
            let count = F::from_usize(span.len()).expect("span length fits");
            let mut acc = vec![F::zero(); states.generated.cols()];
            for j in span {
                for (a, &x) in acc.iter_mut().zip(states.generated.row(j)) {
                    *a = *a + F::from_stored(x);
                }
            }
            acc.into_iter().map(|a| a / count).collect()
        }
    })
}

pub(crate) fn mention_target<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<Target<F>, ScoreError> {
    Ok(Target {
        index: mention.token_index,
        token_id: mention.first_token_id,
        embedding: object_token_embedding(trace, mention, cfg.text_layer, cfg.token_select)?,
    })
}

/// Treats generated token `j` itself as the object.
pub(crate) fn token_target<F: Scalar>(
    trace: &SampleTrace,
    j: usize,
    text_layer: usize,
) -> Result<Target<F>, ScoreError> {
    let token = trace
        .gen_tokens
        .get(j)
        .ok_or(ScoreError::TokenIndexOutOfRange {
            index: j,
            len: trace.n_generated(),
        })?;
    Ok(Target {
        index: j,
        token_id: token.token_id,
        embedding: widen(layer(trace, text_layer)?.generated.row(j)),
    })
}

/// Logit-lens probability of `token_id` at every visual token of layer `l`.
pub fn visual_logit_lens_probs<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    l: usize,
    token_id: u32,
) -> Result<Vec<F>, ScoreError> {
    let states = layer(trace, l)?;
    let token = token_id as usize;
    if token >= pack.vocab_size {
        return Err(ScoreError::TokenOutOfRange {
            token: token_id,
            vocab: pack.vocab_size,
        });
    }
    Ok(states
        .visual
        .iter_rows()
        .map(|row| kernels::logit_lens_prob(&widen::<F>(row), &pack.unembed, token))
        .collect())
}

/// Indices of the `k` most relevant patches, ties to the lowest index.
pub fn top_k_patches<F: Scalar>(probs: &[F], k: usize) -> Result<Vec<usize>, ScoreError> {
    if k == 0 || k > probs.len() {
        return Err(ScoreError::KOutOfRange { k, n: probs.len() });
    }
    Ok(top_k_indices(probs, k))
}

fn similarity<F: Scalar>(
    a: &[F],
    b: &[F],
    distance: Distance,
    what: impl FnOnce() -> String,
) -> Result<F, ScoreError> {
    match distance {
        Distance::Cosine => cosine(a, b).ok_or_else(|| ScoreError::DegenerateEmbedding(what())),
        Distance::L2 => Ok(-kernels::l2_distance(a, b)),
    }
}

fn check_k(cfg: &ScoringConfig, n: usize) -> Result<(), ScoreError> {
    if cfg.k == 0 || cfg.k > n {
        return Err(ScoreError::KOutOfRange { k: cfg.k, n });
    }
    Ok(())
}

/// Patch relevance under the configured grounding metric.
fn relevance<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    target: &Target<F>,
    cfg: &ScoringConfig,
) -> Result<Vec<F>, ScoreError> {
    match cfg.grounding {
        Grounding::LogitLens => {
            visual_logit_lens_probs(trace, pack, cfg.image_layer, target.token_id)
        }
        Grounding::CosineSimilarity => layer(trace, cfg.image_layer)?
            .visual
            .iter_rows()
            .enumerate()
            .map(|(i, row)| {
                cosine(&widen::<F>(row), &target.embedding).ok_or_else(|| {
                    ScoreError::DegenerateEmbedding(format!(
                        "patch {i} or object token at layer {}",
                        cfg.image_layer
                    ))
                })
            })
            .collect(),
    }
}

pub(crate) fn local_for<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    target: &Target<F>,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    check_k(cfg, trace.n_visual)?;
    let sim_layer = cfg.patch_layer.unwrap_or(cfg.image_layer);
    let patches = &layer(trace, sim_layer)?.visual;
    let scores = relevance(trace, pack, target, cfg)?;
    let top = top_k_indices(&scores, cfg.k);

    let sims = top
        .iter()
        .map(|&i| {
            similarity(
                &widen::<F>(patches.row(i)),
                &target.embedding,
                cfg.distance,
                || format!("patch {i} or object token at layer {sim_layer}"),
            )
        })
        .collect::<Result<Vec<F>, _>>()?;

    match cfg.local_aggregation {
        LocalAggregation::Mean => {
            let k = F::from_usize(cfg.k).expect("k fits");
            Ok(sims.iter().copied().sum::<F>() / k)
        }
        LocalAggregation::ProbabilityWeightedMean => {
            let probs = match cfg.grounding {
                Grounding::LogitLens => scores,
                Grounding::CosineSimilarity => {
                    visual_logit_lens_probs(trace, pack, cfg.image_layer, target.token_id)?
                }
            };
            let total: F = top.iter().map(|&i| probs[i]).sum();
            Ok(top
                .iter()
                .zip(&sims)
                .map(|(&i, &s)| probs[i] / total * s)
                .sum())
        }
    }
}

pub(crate) fn global_for<F: Scalar>(
    trace: &SampleTrace,
    target: &Target<F>,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    let states = layer(trace, cfg.image_layer)?;
    let anchor: Vec<F> = match cfg.global_anchor {
        GlobalAnchor::LastInstructionToken => widen(&states.prompt_last),
        GlobalAnchor::LastImageToken => {
            let n = states.visual.rows();
            if n == 0 {
                return Err(ScoreError::DegenerateEmbedding("no visual tokens".into()));
            }
            widen(states.visual.row(n - 1))
        }
        GlobalAnchor::MeanImageTokens => {
            let n = F::from_usize(states.visual.rows()).expect("n fits");
            let mut acc = vec![F::zero(); states.visual.cols()];
            for row in states.visual.iter_rows() {
                for (a, &x) in acc.iter_mut().zip(row) {
                    *a = *a + F::from_stored(x);
                }
            }
            acc.into_iter().map(|a| a / n).collect()
        }
    };
    similarity(&anchor, &target.embedding, cfg.distance, || {
        format!("global anchor or object token at layer {}", cfg.image_layer)
    })
}

pub(crate) fn glsim_for<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    target: &Target<F>,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    let w = F::from_config(cfg.w);
    let global = global_for(trace, target, cfg)?;
    let local = local_for(trace, pack, target, cfg)?;
    Ok(w * global + (F::one() - w) * local)
}

/// Internal confidence with the position of its maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalConfidence<F> {
    pub score: F,
    pub layer: usize,
    pub patch: usize,
}

/// Maximum logit-lens probability (or raw logit) of `token_id` over every
/// exported layer and patch; the first maximum in (layer, patch) order wins.
pub fn internal_confidence_detail<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    token_id: u32,
    raw_logits: bool,
) -> Result<InternalConfidence<F>, ScoreError> {
    let token = token_id as usize;
    if token >= pack.vocab_size {
        return Err(ScoreError::TokenOutOfRange {
            token: token_id,
            vocab: pack.vocab_size,
        });
    }
    let mut best: Option<InternalConfidence<F>> = None;
    for (&l, states) in &trace.layers {
        for (i, row) in states.visual.iter_rows().enumerate() {
            let h = widen::<F>(row);
            let score = if raw_logits {
                kernels::logit_lens_logit(&h, &pack.unembed, token)
            } else {
                kernels::logit_lens_prob(&h, &pack.unembed, token)
            };
            if best.is_none_or(|b| score > b.score) {
                best = Some(InternalConfidence {
                    score,
                    layer: l,
                    patch: i,
                });
            }
        }
    }
    best.ok_or(ScoreError::NoVisualLayers)
}

pub(crate) fn svar_for<F: Scalar>(
    trace: &SampleTrace,
    index: usize,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    let (lo, hi) = cfg.svar_layer_range;
    if lo > hi {
        return Err(ScoreError::InvalidConfig(format!(
            "svar layer range ({lo}, {hi}) is empty"
        )));
    }
    let mut total = F::zero();
    for l in lo..=hi {
        let values = trace.var.get(&l).ok_or(ScoreError::VarLayerMissing(l))?;
        let v = values.get(index).ok_or(ScoreError::TokenIndexOutOfRange {
            index,
            len: values.len(),
        })?;
        total = total + F::from_stored(*v);
    }
    Ok(total)
}

pub(crate) fn contextual_lens_for<F: Scalar>(
    trace: &SampleTrace,
    target: &Target<F>,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    let states = layer(trace, cfg.image_layer)?;
    let mut best: Option<F> = None;
    for (i, row) in states.visual.iter_rows().enumerate() {
        let s = cosine(&widen::<F>(row), &target.embedding).ok_or_else(|| {
            ScoreError::DegenerateEmbedding(format!(
                "patch {i} or object token at layer {}",
                cfg.image_layer
            ))
        })?;
        best = Some(best.map_or(s, |b| b.max(s)));
    }
    best.ok_or_else(|| ScoreError::DegenerateEmbedding("no visual tokens".into()))
}

pub(crate) fn score_target<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    target: &Target<F>,
    cfg: &ScoringConfig,
    method: Method,
) -> Result<F, ScoreError> {
    let token = &trace.gen_tokens[target.index];
    match method {
        Method::Glsim => glsim_for(trace, pack, target, cfg),
        Method::Global => global_for(trace, target, cfg),
        Method::Local => local_for(trace, pack, target, cfg),
        Method::Nll => Ok(F::from_stored(token.logprob)),
        Method::Entropy => Ok(-F::from_stored(token.entropy)),
        Method::InternalConfidence => {
            internal_confidence_detail(trace, pack, target.token_id, cfg.ic_raw_logits)
                .map(|ic| ic.score)
        }
        Method::Svar => svar_for(trace, target.index, cfg),
        Method::ContextualLens => contextual_lens_for(trace, target, cfg),
    }
}

/// Builds the target only for methods that need the embedding.
fn target_for_method<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
    method: Method,
) -> Result<Target<F>, ScoreError> {
    if method.is_similarity() {
        mention_target(trace, mention, cfg)
    } else {
        check_mention(trace, mention)?;
        Ok(Target {
            index: mention.token_index,
            token_id: mention.first_token_id,
            embedding: Vec::new(),
        })
    }
}

/// Scores one mention with one method.
pub fn score_mention<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
    method: Method,
) -> Result<F, ScoreError> {
    cfg.check()?;
    let target = target_for_method(trace, mention, cfg, method)?;
    score_target(trace, pack, &target, cfg, method)
}

/// Mean similarity between the object and its Top-K grounded patches.
pub fn local_score<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    score_mention(trace, pack, mention, cfg, Method::Local)
}

/// Similarity between the object and the scene anchor.
pub fn global_score<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    cfg.check()?;
    global_for(trace, &mention_target(trace, mention, cfg)?, cfg)
}

/// `w * global + (1 - w) * local`.
pub fn glsim_score<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    score_mention(trace, pack, mention, cfg, Method::Glsim)
}

/// Log-probability of the object's first token (higher = more likely real).
pub fn nll_score<F: Scalar>(trace: &SampleTrace, mention: &ObjectMention) -> Result<F, ScoreError> {
    check_mention(trace, mention)?;
    Ok(F::from_stored(
        trace.gen_tokens[mention.token_index].logprob,
    ))
}

/// Negated decoding entropy at the object's first token.
pub fn entropy_score<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
) -> Result<F, ScoreError> {
    check_mention(trace, mention)?;
    Ok(-F::from_stored(
        trace.gen_tokens[mention.token_index].entropy,
    ))
}

pub fn internal_confidence_score<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    mention: &ObjectMention,
) -> Result<F, ScoreError> {
    check_mention(trace, mention)?;
    internal_confidence_detail(trace, pack, mention.first_token_id, false).map(|ic| ic.score)
}

/// Sum of stored head-averaged visual attention ratios over the configured layers.
pub fn svar_score<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    check_mention(trace, mention)?;
    svar_for(trace, mention.token_index, cfg)
}

/// Maximum cosine similarity between the object and any patch.
pub fn contextual_lens_score<F: Scalar>(
    trace: &SampleTrace,
    mention: &ObjectMention,
    cfg: &ScoringConfig,
) -> Result<F, ScoreError> {
    contextual_lens_for(trace, &mention_target(trace, mention, cfg)?, cfg)
}

/// Mean per-token score over `span`, each token scored as if it were the object.
pub fn span_aggregate_score<F: Scalar>(
    trace: &SampleTrace,
    pack: &ModelPack,
    span: Range<usize>,
    cfg: &ScoringConfig,
    method: Method,
) -> Result<F, ScoreError> {
    cfg.check()?;
    if span.is_empty() {
        return Err(ScoreError::EmptySpan);
    }
    if span.end > trace.n_generated() {
        return Err(ScoreError::TokenIndexOutOfRange {
            index: span.end - 1,
            len: trace.n_generated(),
        });
    }
    let count = F::from_usize(span.len()).expect("span length fits");
    let mut total = F::zero();
    for j in span {
        let target = token_target(trace, j, cfg.text_layer)?;
        total = total + score_target(trace, pack, &target, cfg, method)?;
    }
    Ok(total / count)
}
