#![allow(clippy::needless_range_loop)]

//! Retrieval and clustering metrics: Recall@K by cosine nearest neighbors,
//! and NMI / pairwise F1 against a k-means clustering.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fraction of queries whose `k` cosine-nearest neighbors (self excluded)
/// contain a same-label point, for each `k` in `ks` (sorted ascending).
pub fn recall_at_k(embeddings: &Array2<f64>, labels: &[usize], ks: &[usize]) -> Result<Vec<f64>> {
    let m = embeddings.nrows();
    if labels.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            got: (labels.len(), 1),
        });
    }
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadParams(
            "ks must be sorted strictly ascending".into(),
        ));
    }
    for &k in ks {
        if k == 0 || k >= m {
            return Err(Error::BadK { k, len: m });
        }
    }

    let units = unit_rows(embeddings)?;
    let mut hits = vec![0usize; ks.len()];
    let mut order: Vec<usize> = Vec::with_capacity(m - 1);
    for q in 0..m {
        order.clear();
        order.extend((0..m).filter(|&j| j != q));
        // Sort by similarity descending, index ascending on ties.
        order.sort_by(|&a, &b| {
            let sa = units.row(q).dot(&units.row(a));
            let sb = units.row(q).dot(&units.row(b));
            sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
        });
        let mut seen_same = false;
        let mut cut = 0;
        for (ki, &k) in ks.iter().enumerate() {
            while cut < k {
                if labels[order[cut]] == labels[q] {
                    seen_same = true;
                }
                cut += 1;
            }
            if seen_same {
                hits[ki] += 1;
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / m as f64).collect())
}

/// k-means (k-means++ init, at most 100 Lloyd iterations) on the
/// unit-normalized embeddings, then NMI and pairwise F1 between the cluster
/// assignment and the labels. One re-seed on an emptied cluster, then
/// [`Error::DegenerateClustering`].
pub fn nmi_f1(
    embeddings: &Array2<f64>,
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if k < 2 {
        return Err(Error::BadParams("need k >= 2 clusters".into()));
    }
    let m = embeddings.nrows();
    if labels.len() != m || m < k {
        return Err(Error::BadParams(
            "need at least k samples with labels".into(),
        ));
    }
    let units = unit_rows(embeddings)?;
    let assignment = match kmeans(&units, k, seed) {
        Ok(a) => a,
        Err(Error::DegenerateClustering) => kmeans(&units, k, seed.wrapping_add(1))?,
        Err(e) => return Err(e),
    };
    Ok((
        normalized_mutual_information(&assignment, labels),
        pairwise_f1(&assignment, labels),
    ))
}

fn unit_rows(embeddings: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = embeddings.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm.is_nan() || norm <= crate::batch::MIN_NORM {
            return Err(Error::ZeroNorm);
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(out)
}

fn kmeans(units: &Array2<f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    let m = units.nrows();
    let d = units.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centers = Array2::zeros((k, d));
    let first = rng.gen_range(0..m);
    centers.row_mut(0).assign(&units.row(first));
    let mut dist2 = vec![0.0f64; m];
    for c in 1..k {
        let mut total = 0.0;
        for i in 0..m {
            let mut best = f64::INFINITY;
            for cc in 0..c {
                let diff = &units.row(i) - &centers.row(cc);
                let d2 = diff.dot(&diff);
                if d2 < best {
                    best = d2;
                }
            }
            dist2[i] = best;
            total += best;
        }
        let pick = if total <= 0.0 {
            rng.gen_range(0..m)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = m - 1;
            for (i, &w) in dist2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centers.row_mut(c).assign(&units.row(pick));
    }

    let mut assignment = vec![0usize; m];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..m {
            let mut best = (f64::INFINITY, 0usize);
            for c in 0..k {
                let diff = &units.row(i) - &centers.row(c);
                let d2 = diff.dot(&diff);
                if d2 < best.0 {
                    best = (d2, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..m {
            counts[assignment[i]] += 1;
            let mut row = sums.row_mut(assignment[i]);
            row += &units.row(i);
        }
        if counts.contains(&0) {
            return Err(Error::DegenerateClustering);
        }
        for c in 0..k {
            let mut row = centers.row_mut(c);
            row.assign(&(&sums.row(c) / counts[c] as f64));
        }
        if !changed {
            break;
        }
    }
    Ok(assignment)
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

fn normalized_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0usize; kb]; ka];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for i in 0..n {
        joint[a[i]][b[i]] += 1;
        ca[a[i]] += 1;
        cb[b[i]] += 1;
    }
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (y, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n as f64;
            let px = ca[x] as f64 / n as f64;
            let py = cb[y] as f64 / n as f64;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    let ha = entropy(&ca, n);
    let hb = entropy(&cb, n);
    if ha == 0.0 && hb == 0.0 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    (mi / (ha * hb).sqrt()).clamp(0.0, 1.0)
}

fn pairwise_f1(clusters: &[usize], labels: &[usize]) -> f64 {
    let n = clusters.len();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let same_cluster = clusters[i] == clusters[j];
            let same_label = labels[i] == labels[j];
            match (same_cluster, same_label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separated_clusters(per: usize) -> (Array2<f64>, Vec<usize>) {
        let mut emb = Array2::zeros((2 * per, 3));
        let mut labels = Vec::new();
        for i in 0..per {
            emb[(i, 0)] = 1.0;
            emb[(i, 1)] = 0.01 * i as f64;
            labels.push(0);
        }
        for i in 0..per {
            emb[(per + i, 1)] = 1.0;
            emb[(per + i, 2)] = 0.01 * i as f64;
            labels.push(1);
        }
        (emb, labels)
    }

    #[test]
    fn perfect_clusters_recall_one() {
        let (emb, labels) = separated_clusters(5);
        let r = recall_at_k(&emb, &labels, &[1]).unwrap();
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn recall_monotone_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = Array2::from_shape_fn((40, 4), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let r = recall_at_k(&emb, &labels, &[1, 2, 4, 8, 16]).unwrap();
        for w in r.windows(2) {
            assert!(w[0] <= w[1] + 1e-12);
        }
    }

    #[test]
    fn permuted_labels_near_half() {
        // Well-separated equal clusters but labels assigned at random:
        // the NN label matches the query about half the time. Monte-Carlo
        // average over seeds stays within sampling noise of 0.5.
        let (emb, _) = separated_clusters(100);
        let mut total = 0.0;
        let trials = 10;
        for seed in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..2usize)).collect();
            total += recall_at_k(&emb, &labels, &[1]).unwrap()[0];
        }
        let mean = total / trials as f64;
        assert!((mean - 0.5).abs() < 0.06, "mean recall {mean}");
    }

    #[test]
    fn bad_k_rejected() {
        let (emb, labels) = separated_clusters(3);
        assert!(matches!(
            recall_at_k(&emb, &labels, &[6]).unwrap_err(),
            Error::BadK { .. }
        ));
        assert!(recall_at_k(&emb, &labels, &[2, 1]).is_err());
    }

    #[test]
    fn clusters_matching_labels_score_one() {
        let (emb, labels) = separated_clusters(8);
        let (nmi, f1) = nmi_f1(&emb, &labels, 2, 0).unwrap();
        assert!((nmi - 1.0).abs() < 1e-9, "nmi {nmi}");
        assert!((f1 - 1.0).abs() < 1e-9, "f1 {f1}");
    }

    #[test]
    fn single_cluster_nmi_zero() {
        let labels = vec![0, 0, 1, 1];
        let assignment = vec![0, 0, 0, 0];
        assert_eq!(normalized_mutual_information(&assignment, &labels), 0.0);
    }

    #[test]
    fn random_embeddings_low_nmi() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let emb = Array2::from_shape_fn((200, 6), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..2usize)).collect();
        let (nmi, _) = nmi_f1(&emb, &labels, 2, 7).unwrap();
        assert!(nmi < 0.1, "nmi {nmi}");
    }
}
