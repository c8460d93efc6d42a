//! Triplet loss on the normalized Euclidean distance, plus semihard
//! negative mining.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losses::{
    cosine_matrix, sim_from_cos, DistanceKind, LossConfig, LossOutput, PairAccumulator,
};
use crate::scalar::Real;

/// Anchor/positive/negative index triple into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mean over triplets of `( ||a_hat - p_hat||^2 - ||a_hat - n_hat||^2 + m )_+`.
///
/// The subgradient is zero on inactive triplets (and at the exact hinge
/// boundary, which is measure-zero).
pub fn triplet_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    triplets: &[Triplet],
    cfg: &LossConfig<T>,
) -> Result<LossOutput<T>> {
    cfg.require_distance(DistanceKind::NormalizedEuclidean, "triplet loss")?;
    cfg.require_margin_non_negative()?;
    if triplets.is_empty() {
        return Err(Error::NoValidPairs);
    }
    let labels = batch.labels();
    let n = batch.n();
    for (idx, t) in triplets.iter().enumerate() {
        if t.anchor >= n || t.positive >= n || t.negative >= n {
            return Err(Error::BadParams(format!(
                "triplet {idx} indexes out of range"
            )));
        }
        if labels[t.anchor] != labels[t.positive] || labels[t.anchor] == labels[t.negative] {
            return Err(Error::InvalidTriplet { index: idx });
        }
    }

    let units = batch.unit_rows()?;
    let cos = cosine_matrix(&units);
    let inv = T::one() / T::from_usize(triplets.len()).unwrap();
    let mut acc = PairAccumulator::new();
    let mut value = T::zero();
    for t in triplets {
        let s_ap = sim_from_cos(cos[(t.anchor, t.positive)], cfg.distance);
        let s_an = sim_from_cos(cos[(t.anchor, t.negative)], cfg.distance);
        let slack = s_ap - s_an + cfg.margin;
        if slack > T::zero() {
            value = value + slack;
            acc.add(t.anchor, t.positive, inv);
            acc.add(t.anchor, t.negative, -inv);
        }
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

/// All valid triplets of a batch (every same-class ordered pair against
/// every other-class sample).
pub fn all_triplets<T: Real>(batch: &EmbeddingBatch<T>) -> Vec<Triplet> {
    let labels = batch.labels();
    let n = batch.n();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for neg in 0..n {
                if labels[neg] != labels[a] {
                    out.push(Triplet {
                        anchor: a,
                        positive: p,
                        negative: neg,
                    });
                }
            }
        }
    }
    out
}

/// Semihard negative mining in the normalized Euclidean distance.
///
/// For each anchor-positive ordered pair, picks a negative from the semihard
/// band `d(a,p) < d(a,n) < d(a,p) + m` (uniformly at random, seeded) when the
/// band is non-empty, otherwise falls back to the negative with the largest
/// margin violation (minimal `d(a,n)`).
pub fn semihard_mine<T: Real>(
    batch: &EmbeddingBatch<T>,
    cfg: &LossConfig<T>,
    rng_seed: u64,
) -> Result<Vec<Triplet>> {
    cfg.require_margin_non_negative()?;
    let units = batch.unit_rows()?;
    let cos = cosine_matrix(&units);
    let labels = batch.labels();
    let n = batch.n();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    for a in 0..n {
        let negatives: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
        if negatives.is_empty() {
            continue;
        }
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            let d_ap = sim_from_cos(cos[(a, p)], DistanceKind::NormalizedEuclidean);
            let band: Vec<usize> = negatives
                .iter()
                .copied()
                .filter(|&j| {
                    let d_an = sim_from_cos(cos[(a, j)], DistanceKind::NormalizedEuclidean);
                    d_an > d_ap && d_an < d_ap + cfg.margin
                })
                .collect();
            let negative = if band.is_empty() {
                // Hardest negative: smallest d(a,n), ties to the lowest index.
                negatives
                    .iter()
                    .copied()
                    .min_by(|&x, &y| {
                        let dx = sim_from_cos(cos[(a, x)], DistanceKind::NormalizedEuclidean);
                        let dy = sim_from_cos(cos[(a, y)], DistanceKind::NormalizedEuclidean);
                        dx.partial_cmp(&dy).unwrap().then(x.cmp(&y))
                    })
                    .unwrap()
            } else {
                band[rng.gen_range(0..band.len())]
            };
            out.push(Triplet {
                anchor: a,
                positive: p,
                negative,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NoValidPairs);
    }
    Ok(out)
}
