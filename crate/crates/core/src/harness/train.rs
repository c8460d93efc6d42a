//! The training loop: sample a class-balanced batch, evaluate the metric
//! loss plus the scheduled norm penalty, step the optimizer, and log norm
//! and direction-update diagnostics per iteration.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::{batch_norm_stats, EmbeddingBatch};
use crate::error::{Error, Result};
use crate::harness::data::{gen_synthetic, sample_batch, BatchSpec, DatasetConfig};
use crate::harness::metrics::{nmi_f1, recall_at_k};
use crate::harness::model::{Model, ModelConfig};
use crate::losses::{
    all_triplets, cos_softmax_loss, multi_similarity_loss, npair_loss, ntxent_loss, semihard_mine,
    triplet_loss, ClassTemplates, LossConfig, LossKind, LossOutput,
};
use crate::optimizers::{
    measure_direction_change, optimizer_step, OptimizerConfig, OptimizerState,
};
use crate::regularizers::{
    eta_schedule, l2_reg_loss, sec_loss, MuMode, RegularizerConfig, RegularizerKind,
    RegularizerState,
};

/// Embedding norms above this abort the run as diverged.
const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    /// Retrieval/clustering metrics every this many iterations (0 = final only).
    pub eval_interval: usize,
    pub recall_ks: Vec<usize>,
    /// Window length for the direction-variation diagnostic (0 = off).
    pub dtheta_window: usize,
    pub hist_bins: usize,
    pub dataset: DatasetConfig,
    pub batch: BatchSpec,
    pub model: ModelConfig,
    pub loss: LossConfig<f64>,
    pub regularizer: RegularizerConfig<f64>,
    pub optimizer: OptimizerConfig<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 2000,
            eval_interval: 500,
            recall_ks: vec![1, 2, 4, 8],
            dtheta_window: 1000,
            hist_bins: 20,
            dataset: DatasetConfig::default(),
            batch: BatchSpec::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            regularizer: RegularizerConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::BadParams("iterations must be >= 1".into()));
        }
        let spec = &self.batch;
        match self.loss.kind {
            LossKind::Ntxent => {
                if spec.samples_per_class != 2 || spec.classes_per_batch < 2 {
                    return Err(Error::BadParams(
                        "nt-xent needs samples_per_class = 2 and at least 2 classes per batch"
                            .into(),
                    ));
                }
            }
            LossKind::CosSoftmax => {}
            _ => {
                if spec.samples_per_class < 2 || spec.classes_per_batch < 2 {
                    return Err(Error::BadParams(
                        "pair-based losses need >= 2 samples per class and >= 2 classes".into(),
                    ));
                }
            }
        }
        let m = self.dataset.classes * self.dataset.per_class;
        if let Some(&k) = self.recall_ks.iter().max() {
            if k >= m {
                return Err(Error::BadK { k, len: m });
            }
        }
        self.regularizer.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    /// Scheduled penalty contribution `eta_t * L_reg` (zero without one).
    pub sec_loss: f64,
    pub norm_mean: f64,
    pub norm_var: f64,
    pub dtheta_mean: f64,
    pub dtheta_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub recall_ks: Vec<usize>,
    pub recalls: Vec<f64>,
    pub nmi: f64,
    pub f1: f64,
}

/// Direction change of every dataset embedding across one diagnostic window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub iter: usize,
    pub dtheta_mean: f64,
    pub dtheta_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSummary {
    pub mean: f64,
    pub variance: f64,
    pub hist_edges: Vec<f64>,
    pub hist_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: RunConfig,
    pub records: Vec<IterRecord>,
    pub metrics: Vec<MetricRecord>,
    pub window_dtheta: Vec<WindowRecord>,
    /// Norm statistics over the full dataset after training (absent on divergence).
    pub final_norms: Option<NormSummary>,
    pub diverged_at: Option<usize>,
}

impl RunLog {
    /// Per-iteration CSV: `iter,loss,sec_loss,norm_mean,norm_var,dtheta_mean,dtheta_var`.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("iter,loss,sec_loss,norm_mean,norm_var,dtheta_mean,dtheta_var\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter, r.loss, r.sec_loss, r.norm_mean, r.norm_var, r.dtheta_mean, r.dtheta_var
            ));
        }
        out
    }

    /// Final norm histogram CSV: `bin_lo,bin_hi,count`.
    pub fn norms_hist_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        if let Some(h) = &self.final_norms {
            for (b, &count) in h.hist_counts.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    h.hist_edges[b],
                    h.hist_edges[b + 1],
                    count
                ));
            }
        }
        out
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

fn unit_directions(emb: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = emb.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm.is_nan() || norm <= crate::batch::MIN_NORM {
            return Err(Error::ZeroNorm);
        }
        row.mapv_inplace(|x| x / norm);
    }
    Ok(out)
}

/// Evaluates the configured metric loss on a batch. `templates` is required
/// for (and only for) the cosine-softmax family; `mining_seed` only feeds
/// semihard mining.
pub fn metric_loss(
    batch: &EmbeddingBatch<f64>,
    cfg: &LossConfig<f64>,
    templates: Option<&ClassTemplates<f64>>,
    mining_seed: u64,
) -> Result<LossOutput<f64>> {
    match cfg.kind {
        LossKind::Triplet => {
            let triplets = all_triplets(batch);
            if triplets.is_empty() {
                return Err(Error::NoValidPairs);
            }
            triplet_loss(batch, &triplets, cfg)
        }
        LossKind::SemihardTriplet => {
            let mined = semihard_mine(batch, cfg, mining_seed)?;
            triplet_loss(batch, &mined, cfg)
        }
        LossKind::Npair => npair_loss(batch, cfg),
        LossKind::MultiSimilarity => multi_similarity_loss(batch, cfg),
        LossKind::CosSoftmax => {
            let t = templates.ok_or(Error::UnsupportedLoss(
                "cosine-softmax without class templates",
            ))?;
            cos_softmax_loss(batch, t, cfg)
        }
        LossKind::Ntxent => ntxent_loss(batch, cfg),
    }
}

/// Runs the full training loop. Divergence (non-finite loss or a norm above
/// 1e12) stops the run early; the partial log is returned with
/// `diverged_at` set.
pub fn train(cfg: &RunConfig) -> Result<RunLog> {
    cfg.validate()?;
    let ds = gen_synthetic(
        cfg.dataset.classes,
        cfg.dataset.per_class,
        cfg.dataset.input_dim,
        cfg.dataset.spread,
        cfg.dataset.noise_sigma,
        cfg.seed,
    )?;
    // Separate stream from the dataset generator so batch sampling does not
    // depend on dataset internals.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);

    let mut model = Model::init(&cfg.model, &ds, &mut rng)?;
    let mut templates = if cfg.loss.kind == LossKind::CosSoftmax {
        let d = model.embedding_dim();
        let mut w: Array2<f64> = Array2::zeros((ds.classes, d));
        for mut row in w.rows_mut() {
            loop {
                for x in row.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let norm = row.dot(&row).sqrt();
                if norm > 1e-8 {
                    row.mapv_inplace(|x| x / norm);
                    break;
                }
            }
        }
        Some(ClassTemplates::new(w)?)
    } else {
        None
    };

    let mut param_states: Vec<OptimizerState<f64>> = model
        .params
        .iter()
        .map(|p| OptimizerState::new(&cfg.optimizer, p.dim()))
        .collect();
    let mut template_state = templates
        .as_ref()
        .map(|t| OptimizerState::new(&cfg.optimizer, t.data().dim()));

    let mut reg_state = RegularizerState::default();
    if cfg.regularizer.kind == RegularizerKind::Sec
        && cfg.regularizer.ema_init_full_pass
        && matches!(cfg.regularizer.mu, MuMode::Ema { .. })
    {
        let emb = model.forward_all(&ds);
        let all = EmbeddingBatch::new(emb, ds.labels.clone())?;
        let stats = batch_norm_stats(&all, 1);
        reg_state.mu = Some(stats.mean);
    }

    let mut records = Vec::with_capacity(cfg.iterations);
    let mut metrics = Vec::new();
    let mut window_dtheta = Vec::new();
    let mut prev_window_dirs = if cfg.dtheta_window > 0 {
        Some(unit_directions(&model.forward_all(&ds))?)
    } else {
        None
    };
    let mut diverged_at = None;

    for iter in 0..cfg.iterations {
        let indices = sample_batch(&ds, &cfg.batch, &mut rng)?;
        let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
        let (emb, cache) = model.forward(&ds, &indices);
        if emb.iter().any(|x| !x.is_finite()) {
            diverged_at = Some(iter);
            break;
        }
        let batch = EmbeddingBatch::new(emb, labels)?;

        let metric_out = metric_loss(
            &batch,
            &cfg.loss,
            templates.as_ref(),
            cfg.seed.wrapping_add(iter as u64),
        )?;
        let eta_t = match cfg.regularizer.kind {
            RegularizerKind::None => 0.0,
            _ => eta_schedule(&cfg.regularizer, iter, cfg.iterations)?,
        };
        let reg_out = match cfg.regularizer.kind {
            RegularizerKind::None => None,
            RegularizerKind::Sec => {
                let (out, next) = sec_loss(&batch, &cfg.regularizer, &reg_state)?;
                reg_state = next;
                Some(out)
            }
            RegularizerKind::L2reg => Some(l2_reg_loss(&batch, &cfg.regularizer)?),
        };
        let sec_term = reg_out.as_ref().map_or(0.0, |r| eta_t * r.value);

        let stats = batch_norm_stats(&batch, cfg.hist_bins);
        let max_norm = batch
            .unit_rows()?
            .iter()
            .map(|u| u.source_norm)
            .fold(0.0f64, f64::max);
        if !metric_out.value.is_finite() || !sec_term.is_finite() || max_norm > DIVERGENCE_NORM {
            diverged_at = Some(iter);
            break;
        }

        let mut total_grad = metric_out.grad_embeddings.clone();
        if let Some(reg) = &reg_out {
            if eta_t != 0.0 {
                total_grad.zip_mut_with(&reg.grad_embeddings, |g, r| *g += eta_t * r);
            }
        }

        let param_grads = model.backward(&ds, &indices, &cache, &total_grad);
        for (p, (g, s)) in model
            .params
            .iter_mut()
            .zip(param_grads.iter().zip(param_states.iter_mut()))
        {
            let (next, next_state) = optimizer_step(p, g, &cfg.optimizer, s)?;
            *p = next;
            *s = next_state;
        }
        if let (Some(t), Some(ts)) = (templates.as_mut(), template_state.as_mut()) {
            let gt = metric_out
                .grad_templates
                .as_ref()
                .expect("softmax loss returns template gradients");
            let (next, next_state) = optimizer_step(t.data(), gt, &cfg.optimizer, ts)?;
            *t = ClassTemplates::new(next)?;
            *ts = next_state;
        }

        let (emb_after, _) = model.forward(&ds, &indices);
        let mut dthetas = Vec::with_capacity(indices.len());
        for r in 0..indices.len() {
            let d = measure_direction_change(batch.row(r), emb_after.row(r))?;
            dthetas.push(d.delta_theta);
        }
        let (dtheta_mean, dtheta_var) = mean_var(&dthetas);

        records.push(IterRecord {
            iter,
            loss: metric_out.value,
            sec_loss: sec_term,
            norm_mean: stats.mean,
            norm_var: stats.variance,
            dtheta_mean,
            dtheta_var,
        });

        let done = iter + 1;
        if let Some(prev) = prev_window_dirs.as_mut() {
            if done.is_multiple_of(cfg.dtheta_window) {
                let dirs = unit_directions(&model.forward_all(&ds))?;
                let mut deltas = Vec::with_capacity(ds.len());
                for i in 0..ds.len() {
                    let cosd = prev.row(i).dot(&dirs.row(i)).clamp(-1.0, 1.0);
                    deltas.push(cosd.acos());
                }
                let (m, v) = mean_var(&deltas);
                window_dtheta.push(WindowRecord {
                    iter: done,
                    dtheta_mean: m,
                    dtheta_var: v,
                });
                *prev = dirs;
            }
        }

        let eval_due = cfg.eval_interval > 0 && done.is_multiple_of(cfg.eval_interval);
        if eval_due || done == cfg.iterations {
            let emb_all = model.forward_all(&ds);
            let recalls = recall_at_k(&emb_all, &ds.labels, &cfg.recall_ks)?;
            let (nmi, f1) = nmi_f1(
                &emb_all,
                &ds.labels,
                ds.classes,
                cfg.seed.wrapping_add(done as u64),
            )?;
            metrics.push(MetricRecord {
                iter: done,
                recall_ks: cfg.recall_ks.clone(),
                recalls,
                nmi,
                f1,
            });
        }
    }

    let final_norms = if diverged_at.is_none() {
        let emb = model.forward_all(&ds);
        let all = EmbeddingBatch::new(emb, ds.labels.clone())?;
        let stats = batch_norm_stats(&all, cfg.hist_bins);
        Some(NormSummary {
            mean: stats.mean,
            variance: stats.variance,
            hist_edges: stats.hist_edges,
            hist_counts: stats.hist_counts,
        })
    } else {
        None
    };

    Ok(RunLog {
        config: cfg.clone(),
        records,
        metrics,
        window_dtheta,
        final_norms,
        diverged_at,
    })
}
