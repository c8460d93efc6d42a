#![allow(clippy::needless_range_loop)]

//! Cosine-based softmax losses (plain / sphereface / cosface / arcface)
//! against a set of class templates, with gradients to both the embeddings
//! and the templates.

use ndarray::Array2;

use crate::batch::{l2_normalize, unit_cosine, EmbeddingBatch, UnitEmbedding};
use crate::error::{Error, Result};
use crate::losses::{softmax, LossConfig, LossOutput, SoftmaxVariant};
use crate::scalar::Real;

/// Margin-free reductions go through the plain path so they match it exactly.
const ACOS_CLAMP: f64 = 1e-12;

/// One template vector per class; rows are re-normalized before any
/// similarity is computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplates<T: Real> {
    w: Array2<T>,
}

impl<T: Real> ClassTemplates<T> {
    pub fn new(w: Array2<T>) -> Result<Self> {
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("class templates"));
        }
        for row in w.rows() {
            l2_normalize(row)?;
        }
        Ok(Self { w })
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.w
    }

    pub fn unit_rows(&self) -> Result<Vec<UnitEmbedding<T>>> {
        self.w.rows().into_iter().map(l2_normalize).collect()
    }
}

/// Margin-adjusted target-class similarity and its derivative w.r.t.
/// `cos(theta)`.
fn margin_transform<T: Real>(variant: SoftmaxVariant, cos: T, m: T) -> Result<(T, T)> {
    let one = T::one();
    match variant {
        SoftmaxVariant::Plain => Ok((cos, one)),
        SoftmaxVariant::Cosface => Ok((cos - m, one)),
        SoftmaxVariant::Arcface => {
            if m == T::zero() {
                return Ok((cos, one));
            }
            let clamp = T::from_f64(ACOS_CLAMP).unwrap();
            let c = num_traits::clamp(cos, -one + clamp, one - clamp);
            let theta = c.acos();
            let sin_theta = (one - c * c).sqrt();
            Ok(((theta + m).cos(), (theta + m).sin() / sin_theta))
        }
        SoftmaxVariant::Sphereface => {
            let m_int = m.round();
            if (m - m_int).abs() > T::from_f64(1e-9).unwrap() || m_int < one {
                return Err(Error::BadParams(
                    "sphereface margin must be an integer >= 1".into(),
                ));
            }
            if m_int == one {
                return Ok((cos, one));
            }
            let clamp = T::from_f64(ACOS_CLAMP).unwrap();
            let c = num_traits::clamp(cos, -one + clamp, one - clamp);
            let theta = c.acos();
            let sin_theta = (one - c * c).sqrt();
            // theta in [k pi / m, (k+1) pi / m]
            let k = (theta * m_int / T::from_f64(std::f64::consts::PI).unwrap())
                .floor()
                .min(m_int - one)
                .max(T::zero());
            let sign = if (k.to_u64().unwrap_or(0)) % 2 == 0 {
                one
            } else {
                -one
            };
            let psi = sign * (m_int * theta).cos() - (k + k);
            let dpsi = sign * m_int * (m_int * theta).sin() / sin_theta;
            Ok((psi, dpsi))
        }
    }
}

/// Mean over the batch of the margin-softmax cross entropy
/// `-log( exp(s S_{i,y}) / (exp(s S_{i,y}) + sum_{j != y} exp(s cos(theta_ij))) )`.
pub fn cos_softmax_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    templates: &ClassTemplates<T>,
    cfg: &LossConfig<T>,
) -> Result<LossOutput<T>> {
    if templates.dim() != batch.dim() {
        return Err(Error::ShapeMismatch {
            expected: (templates.k(), batch.dim()),
            got: (templates.k(), templates.dim()),
        });
    }
    let k = templates.k();
    for &y in batch.labels() {
        if y >= k {
            return Err(Error::BadLabel {
                label: y,
                classes: k,
            });
        }
    }
    cfg.require_scale_positive()?;
    if cfg.softmax_variant != SoftmaxVariant::Sphereface {
        cfg.require_margin_non_negative()?;
    }

    let n = batch.n();
    let dim = batch.dim();
    let s = cfg.scale;
    let f_units = batch.unit_rows()?;
    let w_units = templates.unit_rows()?;
    let inv_n = T::one() / T::from_usize(n).unwrap();

    let mut grad_embeddings: Array2<T> = Array2::zeros((n, dim));
    let mut grad_templates: Array2<T> = Array2::zeros((k, dim));
    let mut value = T::zero();
    for i in 0..n {
        let y = batch.labels()[i];
        let cosines: Vec<T> = (0..k)
            .map(|c| unit_cosine(&f_units[i], &w_units[c]))
            .collect();
        let (target_sim, target_dcos) =
            margin_transform(cfg.softmax_variant, cosines[y], cfg.margin)?;
        let logits: Vec<T> = (0..k)
            .map(|c| {
                if c == y {
                    s * target_sim
                } else {
                    s * cosines[c]
                }
            })
            .collect();
        let (probs, lse) = softmax(&logits);
        value = value + (lse - logits[y]);

        let inv_f_norm = T::one() / f_units[i].source_norm;
        for c in 0..k {
            let delta = if c == y { T::one() } else { T::zero() };
            let dcos = if c == y { target_dcos } else { T::one() };
            // phi'_ic = dL/dcos(theta_ic), batch-averaged.
            let phi = (probs[c] - delta) * s * dcos * inv_n;
            if phi == T::zero() {
                continue;
            }
            let cos_ic = cosines[c];
            let inv_w_norm = T::one() / w_units[c].source_norm;
            {
                let mut row = grad_embeddings.row_mut(i);
                for d in 0..dim {
                    let tangent = w_units[c].direction[d] - cos_ic * f_units[i].direction[d];
                    row[d] = row[d] + phi * tangent * inv_f_norm;
                }
            }
            {
                let mut row = grad_templates.row_mut(c);
                for d in 0..dim {
                    let tangent = f_units[i].direction[d] - cos_ic * w_units[c].direction[d];
                    row[d] = row[d] + phi * tangent * inv_w_norm;
                }
            }
        }
    }
    value = value * inv_n;
    Ok(LossOutput {
        value,
        grad_embeddings,
        grad_templates: Some(grad_templates),
        pair_records: Vec::new(),
    })
}
