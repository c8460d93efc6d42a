//! Embedding models for the harness: a free embedding table (one trainable
//! row per sample) and a one-hidden-layer MLP with a tanh nonlinearity.
//!
//! The free table is the default verification vehicle; it removes any
//! backbone from the picture. The MLP exists to exercise gradient flow
//! through a nonlinearity.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::SyntheticDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    FreeTable,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    /// MLP only.
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::FreeTable,
            embedding_dim: 16,
            hidden_dim: 32,
        }
    }
}

/// Trainable parameters plus the forward/backward rules that interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    /// FreeTable: `[table (M x D)]`.
    /// Mlp: `[w1 (Din x H), b1 (1 x H), w2 (H x D), b2 (1 x D)]`.
    pub params: Vec<Array2<f64>>,
}

/// Batch activations the backward pass needs.
pub struct ForwardCache {
    hidden: Option<Array2<f64>>,
}

impl Model {
    pub fn init(cfg: &ModelConfig, ds: &SyntheticDataset, rng: &mut ChaCha8Rng) -> Result<Self> {
        match cfg.kind {
            ModelKind::FreeTable => {
                if cfg.embedding_dim != ds.input_dim() {
                    return Err(Error::BadParams(format!(
                        "free_table embeds at the dataset dimension {}, config says {}",
                        ds.input_dim(),
                        cfg.embedding_dim
                    )));
                }
                Ok(Self {
                    kind: cfg.kind,
                    params: vec![ds.points.clone()],
                })
            }
            ModelKind::Mlp => {
                if cfg.hidden_dim == 0 || cfg.embedding_dim < 2 {
                    return Err(Error::BadParams(
                        "mlp needs hidden_dim >= 1 and embedding_dim >= 2".into(),
                    ));
                }
                let din = ds.input_dim();
                let h = cfg.hidden_dim;
                let d = cfg.embedding_dim;
                let mut gauss = |n: usize, m: usize, scale: f64| -> Array2<f64> {
                    Array2::from_shape_fn((n, m), |_| {
                        let x: f64 = rng.sample(StandardNormal);
                        x * scale
                    })
                };
                let w1 = gauss(din, h, 1.0 / (din as f64).sqrt());
                let b1 = Array2::zeros((1, h));
                let w2 = gauss(h, d, 1.0 / (h as f64).sqrt());
                let b2 = Array2::zeros((1, d));
                Ok(Self {
                    kind: cfg.kind,
                    params: vec![w1, b1, w2, b2],
                })
            }
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn embedding_dim(&self) -> usize {
        match self.kind {
            ModelKind::FreeTable => self.params[0].ncols(),
            ModelKind::Mlp => self.params[3].ncols(),
        }
    }

    /// Embeddings for the selected samples.
    pub fn forward(&self, ds: &SyntheticDataset, indices: &[usize]) -> (Array2<f64>, ForwardCache) {
        match self.kind {
            ModelKind::FreeTable => {
                let d = self.params[0].ncols();
                let mut out = Array2::zeros((indices.len(), d));
                for (r, &i) in indices.iter().enumerate() {
                    out.row_mut(r).assign(&self.params[0].row(i));
                }
                (out, ForwardCache { hidden: None })
            }
            ModelKind::Mlp => {
                let x = gather(&ds.points, indices);
                let z = x.dot(&self.params[0]) + self.params[1].row(0);
                let h = z.map(|v| v.tanh());
                let e = h.dot(&self.params[2]) + self.params[3].row(0);
                (e, ForwardCache { hidden: Some(h) })
            }
        }
    }

    /// Embeddings for the whole dataset.
    pub fn forward_all(&self, ds: &SyntheticDataset) -> Array2<f64> {
        match self.kind {
            ModelKind::FreeTable => self.params[0].clone(),
            ModelKind::Mlp => {
                let indices: Vec<usize> = (0..ds.len()).collect();
                self.forward(ds, &indices).0
            }
        }
    }

    /// Gradients w.r.t. every parameter matrix (aligned with `params`),
    /// given the gradient w.r.t. the batch embeddings.
    pub fn backward(
        &self,
        ds: &SyntheticDataset,
        indices: &[usize],
        cache: &ForwardCache,
        grad_emb: &Array2<f64>,
    ) -> Vec<Array2<f64>> {
        match self.kind {
            ModelKind::FreeTable => {
                let mut g = Array2::zeros(self.params[0].dim());
                for (r, &i) in indices.iter().enumerate() {
                    let mut row = g.row_mut(i);
                    row += &grad_emb.row(r);
                }
                vec![g]
            }
            ModelKind::Mlp => {
                let x = gather(&ds.points, indices);
                let h = cache.hidden.as_ref().expect("mlp cache");
                let d_w2 = h.t().dot(grad_emb);
                let d_b2 = grad_emb.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dh = grad_emb.dot(&self.params[2].t());
                let dz = &dh * &h.map(|v| 1.0 - v * v);
                let d_w1 = x.t().dot(&dz);
                let d_b1 = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![d_w1, d_b1, d_w2, d_b2]
            }
        }
    }
}

fn gather(points: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((indices.len(), points.ncols()));
    for (r, &i) in indices.iter().enumerate() {
        out.row_mut(r).assign(&points.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::gen_synthetic;
    use rand::SeedableRng;

    #[test]
    fn free_table_starts_at_the_dataset() {
        let ds = gen_synthetic(2, 3, 4, 2.0, 0.1, 5).unwrap();
        let cfg = ModelConfig {
            kind: ModelKind::FreeTable,
            embedding_dim: 4,
            hidden_dim: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::init(&cfg, &ds, &mut rng).unwrap();
        let (e, _) = m.forward(&ds, &[0, 3]);
        assert_eq!(e.row(0), ds.points.row(0));
        assert_eq!(e.row(1), ds.points.row(3));
    }

    #[test]
    fn free_table_dimension_mismatch_rejected() {
        let ds = gen_synthetic(2, 3, 4, 2.0, 0.1, 5).unwrap();
        let cfg = ModelConfig {
            kind: ModelKind::FreeTable,
            embedding_dim: 8,
            hidden_dim: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Model::init(&cfg, &ds, &mut rng).is_err());
    }

    #[test]
    fn free_table_backward_scatters() {
        let ds = gen_synthetic(2, 3, 4, 2.0, 0.1, 5).unwrap();
        let cfg = ModelConfig {
            kind: ModelKind::FreeTable,
            embedding_dim: 4,
            hidden_dim: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Model::init(&cfg, &ds, &mut rng).unwrap();
        let (_, cache) = m.forward(&ds, &[1, 4]);
        let mut ge = Array2::zeros((2, 4));
        ge[(0, 0)] = 1.0;
        ge[(1, 2)] = -2.0;
        let grads = m.backward(&ds, &[1, 4], &cache, &ge);
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0][(1, 0)], 1.0);
        assert_eq!(grads[0][(4, 2)], -2.0);
        assert_eq!(grads[0][(0, 0)], 0.0);
    }

    #[test]
    fn mlp_shapes() {
        let ds = gen_synthetic(2, 3, 4, 2.0, 0.1, 5).unwrap();
        let cfg = ModelConfig {
            kind: ModelKind::Mlp,
            embedding_dim: 6,
            hidden_dim: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::init(&cfg, &ds, &mut rng).unwrap();
        let (e, cache) = m.forward(&ds, &[0, 1, 2]);
        assert_eq!(e.dim(), (3, 6));
        let grads = m.backward(&ds, &[0, 1, 2], &cache, &Array2::ones((3, 6)));
        assert_eq!(grads[0].dim(), (4, 5));
        assert_eq!(grads[1].dim(), (1, 5));
        assert_eq!(grads[2].dim(), (5, 6));
        assert_eq!(grads[3].dim(), (1, 6));
    }
}
