//! Synthetic clustered datasets and class-balanced batch sampling.

use ndarray::Array2;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    /// Radius of the sphere the class centers are drawn on.
    pub spread: f64,
    /// Within-class Gaussian noise.
    pub noise_sigma: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 30,
            input_dim: 16,
            spread: 8.0,
            noise_sigma: 2.0,
        }
    }
}

/// Points in class-major order; `labels[i]` is the class of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn class_size(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&y| y == class).count()
    }
}

/// Class centers drawn uniformly on a sphere of radius `spread`, points as
/// `center + N(0, sigma^2)` noise. Fully determined by `seed`.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    input_dim: usize,
    spread: f64,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if classes < 2 || per_class < 2 {
        return Err(Error::BadParams(
            "need at least 2 classes with 2 points each".into(),
        ));
    }
    if input_dim < 2 {
        return Err(Error::BadParams("input_dim must be >= 2".into()));
    }
    if spread <= 0.0 || !spread.is_finite() || sigma < 0.0 {
        return Err(Error::BadParams(
            "spread must be positive and noise_sigma non-negative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Array2::zeros((classes, input_dim));
    for c in 0..classes {
        loop {
            let raw: Vec<f64> = (0..input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (d, x) in raw.iter().enumerate() {
                    centers[(c, d)] = x / norm * spread;
                }
                break;
            }
        }
    }

    let total = classes * per_class;
    let mut points = Array2::zeros((total, input_dim));
    let mut labels = Vec::with_capacity(total);
    for c in 0..classes {
        for s in 0..per_class {
            let row = c * per_class + s;
            for d in 0..input_dim {
                let noise: f64 = rng.sample(StandardNormal);
                points[(row, d)] = centers[(c, d)] + sigma * noise;
            }
            labels.push(c);
        }
    }
    Ok(SyntheticDataset {
        points,
        labels,
        classes,
    })
}

/// `classes_per_batch` distinct classes, `samples_per_class` samples each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchSpec {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            classes_per_batch: 10,
            samples_per_class: 3,
        }
    }
}

impl BatchSpec {
    pub fn batch_size(&self) -> usize {
        self.classes_per_batch * self.samples_per_class
    }
}

/// Uniform class-balanced sampling without replacement. Returned indices
/// are grouped per class.
pub fn sample_batch(
    ds: &SyntheticDataset,
    spec: &BatchSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if spec.classes_per_batch == 0 || spec.samples_per_class == 0 {
        return Err(Error::Infeasible("batch spec must be non-zero".into()));
    }
    if spec.classes_per_batch > ds.classes {
        return Err(Error::Infeasible(format!(
            "{} classes requested, dataset has {}",
            spec.classes_per_batch, ds.classes
        )));
    }
    for c in 0..ds.classes {
        if ds.class_size(c) < spec.samples_per_class {
            return Err(Error::Infeasible(format!(
                "class {c} has fewer than {} samples",
                spec.samples_per_class
            )));
        }
    }

    let chosen = index_sample(rng, ds.classes, spec.classes_per_batch);
    let mut indices = Vec::with_capacity(spec.batch_size());
    for c in chosen.iter() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        let picks = index_sample(rng, members.len(), spec.samples_per_class);
        for p in picks.iter() {
            indices.push(members[p]);
        }
    }
    Ok(indices)
}

/// CSV with header `id,label,x0..x{Din-1}`.
pub fn dataset_to_csv(ds: &SyntheticDataset) -> String {
    let din = ds.input_dim();
    let mut out = String::from("id,label");
    for d in 0..din {
        out.push_str(&format!(",x{d}"));
    }
    out.push('\n');
    for i in 0..ds.len() {
        out.push_str(&format!("{i},{}", ds.labels[i]));
        for d in 0..din {
            out.push_str(&format!(",{}", ds.points[(i, d)]));
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV written by [`dataset_to_csv`].
pub fn dataset_from_csv(text: &str) -> Result<SyntheticDataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::BadParams("empty dataset csv".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "label" {
        return Err(Error::BadParams("dataset csv header malformed".into()));
    }
    let din = cols.len() - 2;
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != din + 2 {
            return Err(Error::BadParams(format!(
                "dataset csv row {lineno} has {} fields, expected {}",
                fields.len(),
                din + 2
            )));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| Error::BadParams(format!("bad label on row {lineno}")))?;
        labels.push(label);
        for f in &fields[2..] {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::BadParams(format!("bad value on row {lineno}")))?;
            rows.push(x);
        }
    }
    if labels.is_empty() {
        return Err(Error::BadParams("dataset csv has no rows".into()));
    }
    let n = labels.len();
    let classes = labels.iter().max().unwrap() + 1;
    Ok(SyntheticDataset {
        points: Array2::from_shape_vec((n, din), rows)
            .map_err(|_| Error::BadParams("dataset csv shape".into()))?,
        labels,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic(3, 4, 5, 2.0, 0.3, 99).unwrap();
        let b = gen_synthetic(3, 4, 5, 2.0, 0.3, 99).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(3, 4, 5, 2.0, 0.3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sigma_collapses_classes() {
        let ds = gen_synthetic(2, 3, 4, 1.0, 0.0, 7).unwrap();
        for c in 0..2 {
            let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
            for w in rows.windows(2) {
                assert_eq!(ds.points.row(w[0]), ds.points.row(w[1]));
            }
        }
    }

    #[test]
    fn bad_params_rejected() {
        assert!(gen_synthetic(1, 3, 4, 1.0, 0.1, 0).is_err());
        assert!(gen_synthetic(3, 1, 4, 1.0, 0.1, 0).is_err());
        assert!(gen_synthetic(3, 3, 4, 0.0, 0.1, 0).is_err());
    }

    #[test]
    fn batch_cardinalities() {
        let ds = gen_synthetic(5, 6, 4, 2.0, 0.2, 1).unwrap();
        let spec = BatchSpec {
            classes_per_batch: 2,
            samples_per_class: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let idx = sample_batch(&ds, &spec, &mut rng).unwrap();
        assert_eq!(idx.len(), 6);
        let mut label_counts = std::collections::BTreeMap::new();
        for &i in &idx {
            *label_counts.entry(ds.labels[i]).or_insert(0usize) += 1;
        }
        assert_eq!(label_counts.len(), 2);
        assert!(label_counts.values().all(|&c| c == 3));
        // No duplicates.
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }

    #[test]
    fn infeasible_specs_rejected() {
        let ds = gen_synthetic(3, 4, 4, 2.0, 0.2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let too_many_classes = BatchSpec {
            classes_per_batch: 4,
            samples_per_class: 2,
        };
        assert!(matches!(
            sample_batch(&ds, &too_many_classes, &mut rng).unwrap_err(),
            Error::Infeasible(_)
        ));
        let too_many_samples = BatchSpec {
            classes_per_batch: 2,
            samples_per_class: 5,
        };
        assert!(matches!(
            sample_batch(&ds, &too_many_samples, &mut rng).unwrap_err(),
            Error::Infeasible(_)
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ds = gen_synthetic(3, 3, 4, 2.0, 0.5, 11).unwrap();
        let csv = dataset_to_csv(&ds);
        assert!(csv.starts_with("id,label,x0,x1,x2,x3\n"));
        let back = dataset_from_csv(&csv).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.classes, ds.classes);
        for (a, b) in back.points.iter().zip(ds.points.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_rejects_malformed_rows() {
        assert!(dataset_from_csv("id,label,x0,x1\n0,0,1.0\n").is_err());
        assert!(dataset_from_csv("nope\n").is_err());
    }
}
