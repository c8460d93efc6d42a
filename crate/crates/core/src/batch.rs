//! Batch and vector primitives: normalization, angular similarities, and
//! norm statistics.
//!
//! Both angular measures used throughout the crate are defined on the
//! l2-normalized embeddings and are related by the identity
//! `||a_hat - b_hat||^2 = 2 - 2 <a_hat, b_hat>`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Norms at or below this are treated as degenerate (zero) embeddings.
pub const MIN_NORM: f64 = 1e-30;

/// A batch of `n` embedding vectors of dimension `dim` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T: Real> {
    data: Array2<T>,
    labels: Vec<usize>,
}

impl<T: Real> EmbeddingBatch<T> {
    /// Builds a batch, validating shape (`n >= 1`, `dim >= 2`), label count
    /// and finiteness of every entry.
    pub fn new(data: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        let (n, dim) = data.dim();
        if n < 1 || dim < 2 {
            return Err(Error::BadParams(format!(
                "batch must be at least 1x2, got {n}x{dim}"
            )));
        }
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                expected: (n, 1),
                got: (labels.len(), 1),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding batch"));
        }
        Ok(Self { data, labels })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.data.row(i)
    }

    /// Number of classes implied by the labels (`max label + 1`).
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Normalizes every row; fails with [`Error::ZeroNorm`] on a degenerate row.
    pub fn unit_rows(&self) -> Result<Vec<UnitEmbedding<T>>> {
        (0..self.n()).map(|i| l2_normalize(self.row(i))).collect()
    }
}

/// An l2-normalized direction together with the norm it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbedding<T: Real> {
    pub direction: Array1<T>,
    pub source_norm: T,
}

/// Mean, population variance, and histogram of the per-row norms of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats<T: Real> {
    pub mean: T,
    pub variance: T,
    /// `bins + 1` edges; equal-width over the observed norm range.
    pub hist_edges: Vec<T>,
    pub hist_counts: Vec<usize>,
}

fn norm<T: Real>(v: ArrayView1<'_, T>) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

/// `v / ||v||`, keeping the source norm.
///
/// Fails with [`Error::ZeroNorm`] when `||v|| <= MIN_NORM`: a degenerate
/// embedding has no direction and the caller must not silently continue.
pub fn l2_normalize<T: Real>(v: ArrayView1<'_, T>) -> Result<UnitEmbedding<T>> {
    let n = norm(v);
    if !n.is_finite() || n <= T::from_f64(MIN_NORM).unwrap() {
        return Err(Error::ZeroNorm);
    }
    Ok(UnitEmbedding {
        direction: v.map(|x| *x / n),
        source_norm: n,
    })
}

/// `<a_hat, b_hat>`, clamped to `[-1, 1]` after rounding.
pub fn cosine_distance<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<T> {
    let ua = l2_normalize(a)?;
    let ub = l2_normalize(b)?;
    Ok(unit_cosine(&ua, &ub))
}

/// Cosine of two already-normalized embeddings.
pub fn unit_cosine<T: Real>(a: &UnitEmbedding<T>, b: &UnitEmbedding<T>) -> T {
    let dot = a.direction.dot(&b.direction);
    num_traits::clamp(dot, -T::one(), T::one())
}

/// `||a_hat - b_hat||^2`, in `[0, 4]`.
pub fn normalized_euclidean<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<T> {
    let ua = l2_normalize(a)?;
    let ub = l2_normalize(b)?;
    let d = ua
        .direction
        .iter()
        .zip(ub.direction.iter())
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<T>();
    Ok(num_traits::clamp(d, T::zero(), T::from_f64(4.0).unwrap()))
}

/// Mean and population variance of the per-row norms, plus a histogram over
/// `bins` equal-width bins spanning the observed range.
pub fn batch_norm_stats<T: Real>(batch: &EmbeddingBatch<T>, bins: usize) -> NormStats<T> {
    let norms: Vec<T> = (0..batch.n()).map(|i| norm(batch.row(i))).collect();
    let n = T::from_usize(norms.len()).unwrap();
    let mean = norms.iter().copied().sum::<T>() / n;
    let variance = norms.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / n;

    let bins = bins.max(1);
    let lo = norms.iter().copied().fold(T::infinity(), T::min);
    let hi = norms.iter().copied().fold(T::neg_infinity(), T::max);
    // Degenerate range: widen by one so every norm lands in a well-formed bin.
    let width = if hi > lo {
        (hi - lo) / T::from_usize(bins).unwrap()
    } else {
        T::one()
    };
    let hist_edges: Vec<T> = (0..=bins)
        .map(|b| lo + width * T::from_usize(b).unwrap())
        .collect();
    let mut hist_counts = vec![0usize; bins];
    for x in &norms {
        let mut idx = ((*x - lo) / width).to_usize().unwrap_or(0);
        if idx >= bins {
            idx = bins - 1;
        }
        hist_counts[idx] += 1;
    }

    NormStats {
        mean,
        variance,
        hist_edges,
        hist_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;

    #[test]
    fn normalize_axis_vector() {
        let u = l2_normalize(arr1(&[3.0, 0.0, 0.0]).view()).unwrap();
        assert_eq!(u.direction, arr1(&[1.0, 0.0, 0.0]));
        assert_eq!(u.source_norm, 3.0);
    }

    #[test]
    fn normalize_diagonal() {
        let u = l2_normalize(arr1(&[1.0, 1.0]).view()).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(u.direction[0], inv_sqrt2, epsilon = 1e-15);
        assert_abs_diff_eq!(u.direction[1], inv_sqrt2, epsilon = 1e-15);
        assert_abs_diff_eq!(u.source_norm, 2.0f64.sqrt(), epsilon = 1e-15);
        assert!((u.direction.dot(&u.direction).sqrt() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn normalize_zero_vector_errors() {
        assert_eq!(
            l2_normalize(arr1(&[0.0, 0.0]).view()).unwrap_err(),
            Error::ZeroNorm
        );
    }

    #[test]
    fn cosine_examples() {
        let e1 = arr1(&[1.0, 0.0]);
        let e2 = arr1(&[0.0, 1.0]);
        assert_abs_diff_eq!(cosine_distance(e1.view(), e1.view()).unwrap(), 1.0);
        assert_abs_diff_eq!(cosine_distance(e1.view(), e2.view()).unwrap(), 0.0);
        let d = cosine_distance(arr1(&[1.0, 1.0]).view(), e1.view()).unwrap();
        assert_abs_diff_eq!(d, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn normalized_euclidean_examples() {
        let e1 = arr1(&[1.0, 0.0]);
        let neg = arr1(&[-1.0, 0.0]);
        assert_abs_diff_eq!(normalized_euclidean(e1.view(), e1.view()).unwrap(), 0.0);
        assert_abs_diff_eq!(normalized_euclidean(e1.view(), neg.view()).unwrap(), 4.0);
        let d = normalized_euclidean(arr1(&[1.0, 1.0]).view(), e1.view()).unwrap();
        assert_abs_diff_eq!(d, 2.0 - 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn norm_stats_hand_computed() {
        // Rows with norms {3, 1}: mean 2, population variance 1.
        let b = EmbeddingBatch::new(arr2(&[[3.0, 0.0], [0.0, 1.0]]), vec![0, 1]).unwrap();
        let s = batch_norm_stats(&b, 4);
        assert_abs_diff_eq!(s.mean, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.variance, 1.0, epsilon = 1e-15);
        assert_eq!(s.hist_counts.iter().sum::<usize>(), 2);
        assert_eq!(s.hist_edges.len(), 5);
    }

    #[test]
    fn norm_stats_unit_batch() {
        let b = EmbeddingBatch::new(arr2(&[[1.0, 0.0], [0.0, 1.0]]), vec![0, 1]).unwrap();
        let s = batch_norm_stats(&b, 3);
        assert_abs_diff_eq!(s.mean, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.variance, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn norm_stats_single_row() {
        let b = EmbeddingBatch::new(arr2(&[[3.0, 4.0]]), vec![0]).unwrap();
        let s = batch_norm_stats(&b, 2);
        assert_abs_diff_eq!(s.mean, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.variance, 0.0);
    }

    #[test]
    fn batch_rejects_non_finite() {
        let r = EmbeddingBatch::new(arr2(&[[1.0, f64::NAN]]), vec![0]);
        assert_eq!(r.unwrap_err(), Error::NonFinite("embedding batch"));
    }

    #[test]
    fn batch_rejects_one_dimensional_rows() {
        let r = EmbeddingBatch::new(arr2(&[[1.0], [2.0]]), vec![0, 1]);
        assert!(matches!(r.unwrap_err(), Error::BadParams(_)));
    }

    #[test]
    fn works_in_f32() {
        let u = l2_normalize(arr1(&[3.0f32, 4.0]).view()).unwrap();
        assert!((u.source_norm - 5.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn identity_two_minus_two_cos(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
        ) {
            let a = Array1::from(a);
            let b = Array1::from(b);
            prop_assume!(a.dot(&a).sqrt() > 1e-3 && b.dot(&b).sqrt() > 1e-3);
            let ne = normalized_euclidean(a.view(), b.view()).unwrap();
            let cos = cosine_distance(a.view(), b.view()).unwrap();
            prop_assert!((ne - (2.0 - 2.0 * cos)).abs() <= 1e-12);
        }

        #[test]
        fn normalize_scale_invariant(
            v in proptest::collection::vec(-10.0f64..10.0, 5),
            c in 0.01f64..100.0,
        ) {
            let v = Array1::from(v);
            prop_assume!(v.dot(&v).sqrt() > 1e-3);
            let scaled = v.map(|x| x * c);
            let u1 = l2_normalize(v.view()).unwrap();
            let u2 = l2_normalize(scaled.view()).unwrap();
            for (x, y) in u1.direction.iter().zip(u2.direction.iter()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn variance_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 2..8),
        ) {
            let n = rows.len();
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            let data = Array2::from_shape_vec((n, 3), flat).unwrap();
            let b = EmbeddingBatch::new(data.clone(), vec![0; n]).unwrap();
            let mut rev: Vec<f64> = Vec::new();
            for i in (0..n).rev() {
                rev.extend(data.row(i).iter());
            }
            let b2 = EmbeddingBatch::new(Array2::from_shape_vec((n, 3), rev).unwrap(), vec![0; n]).unwrap();
            let s1 = batch_norm_stats(&b, 4);
            let s2 = batch_norm_stats(&b2, 4);
            prop_assert!((s1.variance - s2.variance).abs() <= 1e-12);
        }
    }
}
