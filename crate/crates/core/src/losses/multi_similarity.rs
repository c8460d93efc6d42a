//! Multi-similarity loss: informative-pair mining followed by separate
//! soft weighting of the surviving positive and negative pairs.

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losses::{
    cosine_matrix, log1p_sum_exp, DistanceKind, LossConfig, LossOutput, PairAccumulator,
};
use crate::scalar::Real;

/// Per anchor `i` with surviving pairs `P'`, `N'`:
///
/// ```text
/// (1/alpha) log(1 + sum_{P'} exp(-alpha (S_ip - lambda)))
///   + (1/beta) log(1 + sum_{N'} exp(beta (S_in - lambda)))
/// ```
///
/// averaged over the batch. Mining keeps a positive `p` if
/// `S_ip - epsilon < max_n S_in` and a negative `n` if
/// `S_in + epsilon > min_p S_ip`, both relative to the hardest
/// counterexample of the anchor.
pub fn multi_similarity_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    cfg: &LossConfig<T>,
) -> Result<LossOutput<T>> {
    cfg.require_distance(DistanceKind::Cosine, "multi-similarity loss")?;
    if cfg.ms.alpha <= T::zero() || cfg.ms.beta <= T::zero() || cfg.ms.epsilon < T::zero() {
        return Err(Error::BadParams(
            "multi-similarity needs alpha, beta > 0 and epsilon >= 0".into(),
        ));
    }
    let labels = batch.labels();
    let n = batch.n();
    let units = batch.unit_rows()?;
    let cos = cosine_matrix(&units);
    let ms = cfg.ms;

    let inv = T::one() / T::from_usize(n).unwrap();
    let mut acc = PairAccumulator::new();
    let mut value = T::zero();
    let mut any_anchor = false;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        any_anchor = true;

        let min_pos = positives
            .iter()
            .map(|&p| cos[(i, p)])
            .fold(T::infinity(), T::min);
        let max_neg = negatives
            .iter()
            .map(|&q| cos[(i, q)])
            .fold(T::neg_infinity(), T::max);
        let kept_pos: Vec<usize> = positives
            .iter()
            .copied()
            .filter(|&p| cos[(i, p)] - ms.epsilon < max_neg)
            .collect();
        let kept_neg: Vec<usize> = negatives
            .iter()
            .copied()
            .filter(|&q| cos[(i, q)] + ms.epsilon > min_pos)
            .collect();

        if !kept_pos.is_empty() {
            let xs: Vec<T> = kept_pos
                .iter()
                .map(|&p| -ms.alpha * (cos[(i, p)] - ms.lambda))
                .collect();
            let (term, weights) = log1p_sum_exp(&xs);
            value = value + term / ms.alpha;
            for (&p, &w) in kept_pos.iter().zip(weights.iter()) {
                acc.add(i, p, -w * inv);
            }
        }
        if !kept_neg.is_empty() {
            let xs: Vec<T> = kept_neg
                .iter()
                .map(|&q| ms.beta * (cos[(i, q)] - ms.lambda))
                .collect();
            let (term, weights) = log1p_sum_exp(&xs);
            value = value + term / ms.beta;
            for (&q, &w) in kept_neg.iter().zip(weights.iter()) {
                acc.add(i, q, w * inv);
            }
        }
    }
    if !any_anchor {
        return Err(Error::NoValidPairs);
    }
    value = value * inv;
    let (grad_embeddings, pair_records) = acc.finish(&units, cfg.kappa(), batch.dim());
    Ok(LossOutput {
        value,
        grad_embeddings,
        grad_templates: None,
        pair_records,
    })
}
