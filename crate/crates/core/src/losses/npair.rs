//! Normalized N-pair (tuplet) loss on the cosine distance.

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losses::{
    cosine_matrix, log1p_sum_exp, DistanceKind, LossConfig, LossOutput, PairAccumulator,
};
use crate::scalar::Real;

/// Per anchor-positive pair: `log(1 + sum_n exp(s (cos(a,n) - cos(a,p))))`,
/// averaged over all ordered same-class pairs of the batch. Every
/// other-class sample serves as a negative.
pub fn npair_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    cfg: &LossConfig<T>,
) -> Result<LossOutput<T>> {
    cfg.require_distance(DistanceKind::Cosine, "n-pair loss")?;
    cfg.require_scale_positive()?;
    let labels = batch.labels();
    let n = batch.n();

    let mut anchors = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p != a && labels[p] == labels[a] {
                anchors.push((a, p));
            }
        }
    }
    let has_negative = labels.iter().any(|&y| y != labels[0]);
    if anchors.is_empty() || !has_negative {
        return Err(Error::NoValidPairs);
    }

    let units = batch.unit_rows()?;
    let cos = cosine_matrix(&units);
    let s = cfg.scale;
    let inv = T::one() / T::from_usize(anchors.len()).unwrap();
    let mut acc = PairAccumulator::new();
    let mut value = T::zero();
    for &(a, p) in &anchors {
        let negs: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        let exponents: Vec<T> = negs
            .iter()
            .map(|&j| s * (cos[(a, j)] - cos[(a, p)]))
            .collect();
        let (term, weights) = log1p_sum_exp(&exponents);
        value = value + term;
        let mut total_weight = T::zero();
        for (&neg, &w) in negs.iter().zip(weights.iter()) {
            acc.add(a, neg, s * w * inv);
            total_weight = total_weight + w;
        }
        acc.add(a, p, -s * total_weight * inv);
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
