//! Loss functions with analytic gradients w.r.t. the raw (unnormalized)
//! embeddings, and for the softmax family w.r.t. the class templates.
//!
//! Every pair-based loss here depends on the embeddings only through
//! pairwise angular similarities `S_ij`, so its gradient to an embedding
//! decomposes into per-pair scalar weights `phi_ij = dL/dS_ij` times a
//! tangent-space direction:
//!
//! ```text
//! dL/df_i = sum_j phi_ij * kappa * (cos(theta_ij) f_i_hat - f_j_hat) / ||f_i||
//! ```
//!
//! with `kappa = 2` for the normalized Euclidean distance and `kappa = -1`
//! for the cosine distance. The per-pair pieces are recorded in
//! [`PairGradient`] values so callers can rebuild and analyze the gradient.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::batch::{unit_cosine, EmbeddingBatch, UnitEmbedding};
use crate::error::{Error, Result};
use crate::scalar::Real;

mod multi_similarity;
mod npair;
mod ntxent;
mod softmax;
mod triplet;

pub use multi_similarity::multi_similarity_loss;
pub use npair::npair_loss;
pub use ntxent::ntxent_loss;
pub use softmax::{cos_softmax_loss, ClassTemplates};
pub use triplet::{all_triplets, semihard_mine, triplet_loss, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Triplet,
    SemihardTriplet,
    Npair,
    MultiSimilarity,
    CosSoftmax,
    Ntxent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    NormalizedEuclidean,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxVariant {
    Plain,
    Sphereface,
    Cosface,
    Arcface,
}

/// Multi-similarity hyperparameters `(epsilon, lambda, alpha, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsParams<T: Real> {
    pub epsilon: T,
    pub lambda: T,
    pub alpha: T,
    pub beta: T,
}

impl<T: Real> Default for MsParams<T> {
    fn default() -> Self {
        Self {
            epsilon: T::from_f64(0.1).unwrap(),
            lambda: T::from_f64(0.5).unwrap(),
            alpha: T::from_f64(2.0).unwrap(),
            beta: T::from_f64(40.0).unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig<T: Real> {
    pub kind: LossKind,
    pub margin: T,
    pub scale: T,
    pub temperature: T,
    pub distance: DistanceKind,
    pub softmax_variant: SoftmaxVariant,
    pub ms: MsParams<T>,
}

impl<T: Real> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            kind: LossKind::Triplet,
            margin: T::one(),
            scale: T::from_f64(25.0).unwrap(),
            temperature: T::from_f64(0.5).unwrap(),
            distance: DistanceKind::NormalizedEuclidean,
            softmax_variant: SoftmaxVariant::Plain,
            ms: MsParams::default(),
        }
    }
}

impl<T: Real> LossConfig<T> {
    pub fn triplet(margin: T) -> Self {
        Self {
            kind: LossKind::Triplet,
            margin,
            ..Self::default()
        }
    }

    pub fn semihard_triplet(margin: T) -> Self {
        Self {
            kind: LossKind::SemihardTriplet,
            margin,
            ..Self::default()
        }
    }

    pub fn npair(scale: T) -> Self {
        Self {
            kind: LossKind::Npair,
            scale,
            distance: DistanceKind::Cosine,
            ..Self::default()
        }
    }

    pub fn multi_similarity(ms: MsParams<T>) -> Self {
        Self {
            kind: LossKind::MultiSimilarity,
            ms,
            distance: DistanceKind::Cosine,
            ..Self::default()
        }
    }

    pub fn cos_softmax(variant: SoftmaxVariant, scale: T, margin: T) -> Self {
        Self {
            kind: LossKind::CosSoftmax,
            softmax_variant: variant,
            scale,
            margin,
            distance: DistanceKind::Cosine,
            ..Self::default()
        }
    }

    pub fn ntxent(temperature: T) -> Self {
        Self {
            kind: LossKind::Ntxent,
            temperature,
            distance: DistanceKind::Cosine,
            ..Self::default()
        }
    }

    /// `kappa` of the configured distance: 2 (normalized Euclidean) or -1 (cosine).
    pub fn kappa(&self) -> T {
        match self.distance {
            DistanceKind::NormalizedEuclidean => T::from_f64(2.0).unwrap(),
            DistanceKind::Cosine => -T::one(),
        }
    }

    pub(crate) fn require_distance(&self, want: DistanceKind, what: &str) -> Result<()> {
        if self.distance != want {
            return Err(Error::BadParams(format!(
                "{what} requires distance {want:?}, got {:?}",
                self.distance
            )));
        }
        Ok(())
    }

    pub(crate) fn require_margin_non_negative(&self) -> Result<()> {
        if self.margin < T::zero() {
            return Err(Error::BadParams("margin must be non-negative".into()));
        }
        Ok(())
    }

    pub(crate) fn require_scale_positive(&self) -> Result<()> {
        if self.scale <= T::zero() {
            return Err(Error::BadParams("scale must be positive".into()));
        }
        Ok(())
    }
}

/// One pair's share of the gradient to embedding `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGradient<T: Real> {
    /// Embedding the gradient flows to.
    pub i: usize,
    /// Partner embedding of the pair.
    pub j: usize,
    /// `dL/dS_ij`, shared by both orientations of the pair.
    pub phi: T,
    /// Distance constant of the loss (2 or -1).
    pub kappa: T,
    /// `kappa * (cos(theta_ij) f_i_hat - f_j_hat)`; orthogonal to `f_i_hat`.
    /// The full gradient share is `phi * angular_grad / ||f_i||`.
    pub angular_grad: Array1<T>,
}

/// Loss value plus gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T: Real> {
    pub value: T,
    pub grad_embeddings: Array2<T>,
    /// Present exactly for the cosine-softmax family.
    pub grad_templates: Option<Array2<T>>,
    /// Per-pair decomposition; empty for non-pair-based losses.
    pub pair_records: Vec<PairGradient<T>>,
}

/// Tangent-projected gradient of `S_ij` w.r.t. the unit direction of `i`:
/// `kappa * (cos(theta) f_i_hat - f_j_hat)`.
pub(crate) fn angular_pair_grad<T: Real>(
    ui: &UnitEmbedding<T>,
    uj: &UnitEmbedding<T>,
    kappa: T,
) -> Array1<T> {
    let cos = unit_cosine(ui, uj);
    let mut out = ui.direction.clone();
    out.zip_mut_with(&uj.direction, |a, b| *a = kappa * (cos * *a - *b));
    out
}

/// Accumulates `phi` per unordered pair, then materializes the gradient
/// matrix and the pair records in one pass.
pub(crate) struct PairAccumulator<T: Real> {
    phi: BTreeMap<(usize, usize), T>,
}

impl<T: Real> PairAccumulator<T> {
    pub(crate) fn new() -> Self {
        Self {
            phi: BTreeMap::new(),
        }
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, w: T) {
        let key = (i.min(j), i.max(j));
        let entry = self.phi.entry(key).or_insert_with(T::zero);
        *entry = *entry + w;
    }

    pub(crate) fn finish(
        self,
        units: &[UnitEmbedding<T>],
        kappa: T,
        dim: usize,
    ) -> (Array2<T>, Vec<PairGradient<T>>) {
        let n = units.len();
        let mut grad = Array2::zeros((n, dim));
        let mut records = Vec::with_capacity(2 * self.phi.len());
        for ((i, j), phi) in self.phi {
            if phi == T::zero() {
                continue;
            }
            for (a, b) in [(i, j), (j, i)] {
                let u = angular_pair_grad(&units[a], &units[b], kappa);
                let inv_norm = T::one() / units[a].source_norm;
                let mut row = grad.row_mut(a);
                row.zip_mut_with(&u, |g, x| *g = *g + phi * *x * inv_norm);
                records.push(PairGradient {
                    i: a,
                    j: b,
                    phi,
                    kappa,
                    angular_grad: u,
                });
            }
        }
        (grad, records)
    }
}

/// Rebuilds the gradient of a pair-based loss from its pair records and
/// checks it against the stored gradient matrix (1e-10 relative, row-wise).
///
/// Cosine-softmax outputs are rejected: their gradient runs through class
/// templates, not embedding pairs.
pub fn decompose_pair_gradients<T: Real>(
    out: &LossOutput<T>,
    batch: &EmbeddingBatch<T>,
) -> Result<Vec<PairGradient<T>>> {
    if out.grad_templates.is_some() {
        return Err(Error::UnsupportedLoss("cosine-softmax loss"));
    }
    let units = batch.unit_rows()?;
    let mut recon: Array2<T> = Array2::zeros(out.grad_embeddings.dim());
    let mut fresh = Vec::with_capacity(out.pair_records.len());
    for rec in &out.pair_records {
        let u = angular_pair_grad(&units[rec.i], &units[rec.j], rec.kappa);
        let inv_norm = T::one() / units[rec.i].source_norm;
        let mut row = recon.row_mut(rec.i);
        row.zip_mut_with(&u, |g, x| *g = *g + rec.phi * *x * inv_norm);
        fresh.push(PairGradient {
            angular_grad: u,
            ..rec.clone()
        });
    }

    let mut max_rel = 0.0f64;
    for i in 0..batch.n() {
        let gref = out.grad_embeddings.row(i);
        let diff = recon
            .row(i)
            .iter()
            .zip(gref.iter())
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            .sqrt()
            .as_f64();
        let scale = gref.iter().map(|x| *x * *x).sum::<T>().sqrt().as_f64();
        let rel = diff / scale.max(1e-300);
        if scale > 0.0 && rel > max_rel {
            max_rel = rel;
        } else if scale == 0.0 && diff > 0.0 {
            max_rel = f64::INFINITY;
        }
    }
    if max_rel > 1e-10 {
        return Err(Error::ReconstructionMismatch { max_rel });
    }
    Ok(fresh)
}

/// `log(1 + sum_i exp(x_i))` with the softmax weights
/// `exp(x_i) / (1 + sum exp(x))`, computed stably.
pub(crate) fn log1p_sum_exp<T: Real>(xs: &[T]) -> (T, Vec<T>) {
    let m = xs.iter().copied().fold(T::zero(), T::max);
    let base = (-m).exp();
    let shifted: Vec<T> = xs.iter().map(|x| (*x - m).exp()).collect();
    let denom = base + shifted.iter().copied().sum::<T>();
    let value = m + denom.ln();
    let weights = shifted.iter().map(|e| *e / denom).collect();
    (value, weights)
}

/// Stable softmax probabilities plus `log(sum exp(x))`.
pub(crate) fn softmax<T: Real>(xs: &[T]) -> (Vec<T>, T) {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let shifted: Vec<T> = xs.iter().map(|x| (*x - m).exp()).collect();
    let denom = shifted.iter().copied().sum::<T>();
    let lse = m + denom.ln();
    let probs = shifted.iter().map(|e| *e / denom).collect();
    (probs, lse)
}

/// Pairwise cosine matrix of pre-normalized rows (symmetric, unit diagonal).
pub(crate) fn cosine_matrix<T: Real>(units: &[UnitEmbedding<T>]) -> Array2<T> {
    let n = units.len();
    let mut c = Array2::zeros((n, n));
    for i in 0..n {
        c[(i, i)] = T::one();
        for j in (i + 1)..n {
            let v = unit_cosine(&units[i], &units[j]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Similarity in the configured distance, from a cosine value.
pub(crate) fn sim_from_cos<T: Real>(cos: T, distance: DistanceKind) -> T {
    match distance {
        DistanceKind::Cosine => cos,
        DistanceKind::NormalizedEuclidean => T::from_f64(2.0).unwrap() - (cos + cos),
    }
}
