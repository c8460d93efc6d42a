//! NT-Xent: normalized-temperature cross entropy over cosine similarities,
//! structurally a variant of the normalized N-pair loss.

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losses::{
    cosine_matrix, softmax, DistanceKind, LossConfig, LossOutput, PairAccumulator,
};
use crate::scalar::Real;

/// Rows `2i` and `2i+1` are a positive pair. Every anchor contrasts its
/// partner against all other `2N - 2` rows:
///
/// ```text
/// L_u = -log( exp(cos(u, v)/tau) / sum_{w != u} exp(cos(u, w)/tau) )
/// ```
///
/// averaged over all `2N` anchors.
pub fn ntxent_loss<T: Real>(
    views: &EmbeddingBatch<T>,
    cfg: &LossConfig<T>,
) -> Result<LossOutput<T>> {
    cfg.require_distance(DistanceKind::Cosine, "nt-xent loss")?;
    if cfg.temperature <= T::zero() {
        return Err(Error::BadParams("temperature must be positive".into()));
    }
    let rows = views.n();
    if !rows.is_multiple_of(2) {
        return Err(Error::BadParams(format!(
            "nt-xent expects paired rows, got {rows}"
        )));
    }
    if rows < 4 {
        return Err(Error::NoValidPairs);
    }

    let units = views.unit_rows()?;
    let cos = cosine_matrix(&units);
    let inv_tau = T::one() / cfg.temperature;
    let inv_rows = T::one() / T::from_usize(rows).unwrap();
    let mut acc = PairAccumulator::new();
    let mut value = T::zero();
    for u in 0..rows {
        let partner = u ^ 1;
        let others: Vec<usize> = (0..rows).filter(|&w| w != u).collect();
        let logits: Vec<T> = others.iter().map(|&w| cos[(u, w)] * inv_tau).collect();
        let (probs, lse) = softmax(&logits);
        let partner_pos = others.iter().position(|&w| w == partner).unwrap();
        value = value + (lse - logits[partner_pos]);
        for (&w, &p) in others.iter().zip(probs.iter()) {
            let delta = if w == partner { T::one() } else { T::zero() };
            acc.add(u, w, (p - delta) * inv_tau * inv_rows);
        }
    }
    value = value * inv_rows;
    let (grad_embeddings, pair_records) = acc.finish(&units, cfg.kappa(), views.dim());
    Ok(LossOutput {
        value,
        grad_embeddings,
        grad_templates: None,
        pair_records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    #[test]
    fn orthogonal_pairs_hand_value() {
        // Two pairs: each pair's views identical, the two sources mutually
        // orthogonal, tau = 0.5. Per anchor: partner sim 1 -> e^2, the two
        // cross-pair rows sim 0 -> e^0 each.
        let b = EmbeddingBatch::new(
            arr2(&[
                [1.0, 0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
            ]),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let out = ntxent_loss(&b, &LossConfig::ntxent(0.5)).unwrap();
        let e2 = 2.0f64.exp();
        let expected = -(e2 / (e2 + 2.0)).ln();
        assert_abs_diff_eq!(out.value, expected, epsilon = 1e-12);
    }

    #[test]
    fn single_pair_rejected() {
        let b = EmbeddingBatch::new(arr2(&[[1.0, 0.0], [0.9, 0.1]]), vec![0, 0]).unwrap();
        assert_eq!(
            ntxent_loss(&b, &LossConfig::ntxent(0.5)).unwrap_err(),
            Error::NoValidPairs
        );
    }

    #[test]
    fn temperature_must_be_positive() {
        let b = EmbeddingBatch::new(
            arr2(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        assert!(matches!(
            ntxent_loss(&b, &LossConfig::ntxent(0.0)).unwrap_err(),
            Error::BadParams(_)
        ));
    }
}
