//! Vector kernels shared by the scorers.

use std::cmp::Ordering;

use crate::scalar::Scalar;
use crate::trace::Matrix;

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Dot product of a working-precision vector with a stored row.
#[inline]
pub fn dot_stored<F: Scalar>(a: &[F], row: &[f32]) -> F {
    a.iter()
        .zip(row)
        .fold(F::zero(), |acc, (&x, &y)| acc + x * F::from_stored(y))
}

#[inline]
pub fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine<F: Scalar>(a: &[F], b: &[F]) -> Option<F> {
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

pub fn l2_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .fold(F::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Numerically stable softmax (max-logit subtraction). The normalizer is
/// accumulated in f64 so f32 outputs still sum to 1 within a few ulps over
/// large vocabularies.
pub fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().map(|e| e.to_f64_lossy()).sum();
    exps.into_iter()
        .map(|e| F::from_config(e.to_f64_lossy() / total))
        .collect()
}

/// `ln sum exp(z)` with max subtraction.
pub fn log_sum_exp<F: Scalar>(logits: &[F]) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let total: f64 = logits.iter().map(|&z| (z - max).exp().to_f64_lossy()).sum();
    max + F::from_config(total.ln())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn token_entropy<F: Scalar>(probs: &[F]) -> F {
    -probs
        .iter()
        .filter(|&&p| p > F::zero())
        .map(|&p| p * p.ln())
        .sum::<F>()
}

/// Probability of `token` under `softmax(h . W_U^T)`, computed in one pass
/// over the vocabulary with a running maximum. The normalizer is kept in
/// f64, as in [`softmax`].
pub fn logit_lens_prob<F: Scalar>(hidden: &[F], unembed: &Matrix, token: usize) -> F {
    let mut max = F::neg_infinity();
    let mut total = 0.0f64;
    let mut target = F::zero();
    for (j, row) in unembed.iter_rows().enumerate() {
        let z = dot_stored(hidden, row);
        if j == token {
            target = z;
        }
        if z > max {
            total = total * (max - z).exp().to_f64_lossy() + 1.0;
            max = z;
        } else {
            total += (z - max).exp().to_f64_lossy();
        }
    }
    F::from_config((target - max).exp().to_f64_lossy() / total)
}

/// Raw logit of `token`.
pub fn logit_lens_logit<F: Scalar>(hidden: &[F], unembed: &Matrix, token: usize) -> F {
    dot_stored(hidden, unembed.row(token))
}

/// Descending by value, ascending by index on ties.
fn rank_order<F: Scalar>(values: &[F]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Indices of the `k` largest values, ties to the lowest index, sorted by
/// descending value then ascending index. Requires `1 <= k <= len`.
pub fn top_k_indices<F: Scalar>(values: &[F], k: usize) -> Vec<usize> {
    debug_assert!(k >= 1 && k <= values.len());
    let order = rank_order(values);
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(&order);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        let a = [1.0f64, 0.0, 0.0];
        assert_eq!(cosine(&a, &a), Some(1.0));
        assert_eq!(cosine(&a, &[0.0, 2.0, 0.0]), Some(0.0));
        assert_eq!(cosine(&a, &[-3.0, 0.0, 0.0]), Some(-1.0));
        assert_eq!(cosine(&a, &[0.0; 3]), None);
    }

    #[test]
    fn entropy_cases() {
        let uniform = vec![1.0f64 / 256.0; 256];
        assert!((token_entropy(&uniform) - 256f64.ln()).abs() < 1e-9);
        assert_eq!(token_entropy(&[0.0f64, 1.0, 0.0]), 0.0);
        assert!((token_entropy(&[0.5f64, 0.5, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn one_pass_softmax_matches_two_pass() {
        let unembed = Matrix::from_rows(&[
            vec![1.0, 2.0],
            vec![-1.0, 0.5],
            vec![3.0, -2.0],
            vec![0.0, 0.0],
        ]);
        let h = [0.7f64, -1.3];
        let logits: Vec<f64> = unembed.iter_rows().map(|r| dot_stored(&h, r)).collect();
        let probs = softmax(&logits);
        for (t, p) in probs.iter().enumerate() {
            assert!((logit_lens_prob(&h, &unembed, t) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn top_k_ties_break_low() {
        assert_eq!(top_k_indices(&[0.1f64, 0.7, 0.2], 2), [1, 2]);
        assert_eq!(top_k_indices(&[0.5f64; 5], 3), [0, 1, 2]);
        assert_eq!(top_k_indices(&[0.3f64, 0.9, 0.3, 0.9], 3), [1, 3, 0]);
    }
}
