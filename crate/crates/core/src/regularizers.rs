//! Norm regularizers: the spherical embedding constraint (a quadratic
//! penalty pulling every norm toward a shared radius `mu`) and the plain
//! l2 penalty, which is the `mu = 0` special case.
//!
//! `mu` is always treated as a constant under differentiation, so the
//! gradient of the constraint to row `i` is exactly radial:
//!
//! ```text
//! d/df_i (1/N) sum (||f|| - mu)^2 = (2/N) (||f_i|| - mu) f_i_hat
//! ```

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::batch::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::losses::LossOutput;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    Sec,
    L2reg,
    None,
}

/// How the target radius `mu` is chosen per batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MuMode<T: Real> {
    /// Mean norm of the current batch.
    BatchMean,
    /// A fixed radius.
    Fixed { value: T },
    /// Exponential moving average of batch-mean norms:
    /// `mu_t = (1 - rho) mu_{t-1} + rho * mean_t`, seeded by the first batch.
    Ema { rho: T },
}

/// Penalty-weight schedule; `t` counts iterations in `[0, total]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EtaSchedule {
    Constant,
    /// `eta * t / total`.
    LinearRamp,
    /// `min(eta, 500 t / total)`.
    CappedRamp,
    /// Zero before `start_epoch`, a linear ramp across that one epoch, `eta`
    /// after. Epoch boundaries come from slicing `total` into `total_epochs`.
    WarmupEpochs {
        start_epoch: usize,
        total_epochs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerConfig<T: Real> {
    pub kind: RegularizerKind,
    pub eta: T,
    pub mu: MuMode<T>,
    pub schedule: EtaSchedule,
    /// Seed the EMA from a full pass over the training set instead of the
    /// first batch.
    pub ema_init_full_pass: bool,
}

impl<T: Real> Default for RegularizerConfig<T> {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            eta: T::zero(),
            mu: MuMode::BatchMean,
            schedule: EtaSchedule::Constant,
            ema_init_full_pass: false,
        }
    }
}

impl<T: Real> RegularizerConfig<T> {
    pub fn sec(eta: T, mu: MuMode<T>) -> Self {
        Self {
            kind: RegularizerKind::Sec,
            eta,
            mu,
            ..Self::default()
        }
    }

    pub fn l2reg(eta: T) -> Self {
        Self {
            kind: RegularizerKind::L2reg,
            eta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta < T::zero() {
            return Err(Error::BadParams("eta must be non-negative".into()));
        }
        match self.mu {
            MuMode::Fixed { value } if value < T::zero() => {
                Err(Error::BadParams("fixed mu must be non-negative".into()))
            }
            MuMode::Ema { rho } if rho < T::zero() || rho > T::one() => {
                Err(Error::BadParams("ema rho must lie in [0, 1]".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Running state of the constraint: the current radius and a step counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerState<T: Real> {
    /// `None` until the first batch is seen (EMA mode seeds from it).
    pub mu: Option<T>,
    pub step: usize,
}

impl<T: Real> Default for RegularizerState<T> {
    fn default() -> Self {
        Self { mu: None, step: 0 }
    }
}

/// `(1/N) sum_i (||f_i|| - mu)^2` with the radial gradient of the docs
/// above; `mu` resolved per `cfg.mu` and recorded in the returned state.
pub fn sec_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    cfg: &RegularizerConfig<T>,
    state: &RegularizerState<T>,
) -> Result<(LossOutput<T>, RegularizerState<T>)> {
    cfg.validate()?;
    let units = batch.unit_rows()?;
    let n = T::from_usize(batch.n()).unwrap();
    let batch_mean = units.iter().map(|u| u.source_norm).sum::<T>() / n;
    let mu = match cfg.mu {
        MuMode::BatchMean => batch_mean,
        MuMode::Fixed { value } => value,
        MuMode::Ema { rho } => match state.mu {
            None => batch_mean,
            Some(prev) => (T::one() - rho) * prev + rho * batch_mean,
        },
    };

    let two_over_n = T::from_f64(2.0).unwrap() / n;
    let mut value = T::zero();
    let mut grad: Array2<T> = Array2::zeros((batch.n(), batch.dim()));
    for (i, u) in units.iter().enumerate() {
        let dev = u.source_norm - mu;
        value = value + dev * dev;
        let coeff = two_over_n * dev;
        let mut row = grad.row_mut(i);
        row.zip_mut_with(&u.direction, |g, d| *g = coeff * *d);
    }
    value = value / n;

    let next = RegularizerState {
        mu: Some(mu),
        step: state.step + 1,
    };
    Ok((
        LossOutput {
            value,
            grad_embeddings: grad,
            grad_templates: None,
            pair_records: Vec::new(),
        },
        next,
    ))
}

/// `(1/N) sum_i ||f_i||^2` with gradient `(2/N) f_i`. Zero rows are fine
/// here: they contribute nothing.
pub fn l2_reg_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    cfg: &RegularizerConfig<T>,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let n = T::from_usize(batch.n()).unwrap();
    let two_over_n = T::from_f64(2.0).unwrap() / n;
    let value = batch.data().iter().map(|x| *x * *x).sum::<T>() / n;
    let grad = batch.data().map(|x| two_over_n * *x);
    Ok(LossOutput {
        value,
        grad_embeddings: grad,
        grad_templates: None,
        pair_records: Vec::new(),
    })
}

/// Scheduled penalty weight at iteration `t` of `total`.
pub fn eta_schedule<T: Real>(cfg: &RegularizerConfig<T>, t: usize, total: usize) -> Result<T> {
    if total == 0 {
        return Err(Error::BadSchedule);
    }
    let frac = T::from_usize(t).unwrap() / T::from_usize(total).unwrap();
    Ok(match cfg.schedule {
        EtaSchedule::Constant => cfg.eta,
        EtaSchedule::LinearRamp => cfg.eta * frac,
        EtaSchedule::CappedRamp => cfg.eta.min(T::from_f64(500.0).unwrap() * frac),
        EtaSchedule::WarmupEpochs {
            start_epoch,
            total_epochs,
        } => {
            if total_epochs == 0 {
                return Err(Error::BadSchedule);
            }
            let epoch_pos = frac * T::from_usize(total_epochs).unwrap();
            let start = T::from_usize(start_epoch).unwrap();
            if epoch_pos < start {
                T::zero()
            } else if epoch_pos >= start + T::one() {
                cfg.eta
            } else {
                cfg.eta * (epoch_pos - start)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr2;

    fn b(rows: &[[f64; 2]]) -> EmbeddingBatch<f64> {
        let data =
            Array2::from_shape_vec((rows.len(), 2), rows.iter().flatten().copied().collect())
                .unwrap();
        EmbeddingBatch::new(data, vec![0; rows.len()]).unwrap()
    }

    #[test]
    fn batch_mean_hand_values() {
        // Norms {3, 1}: mu = 2, value = 1, grad rows +f1_hat and -f2_hat.
        let batch = b(&[[3.0, 0.0], [0.0, 1.0]]);
        let cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        let (out, state) = sec_loss(&batch, &cfg, &RegularizerState::default()).unwrap();
        assert_abs_diff_eq!(out.value, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.grad_embeddings[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.grad_embeddings[(0, 1)], 0.0);
        assert_abs_diff_eq!(out.grad_embeddings[(1, 0)], 0.0);
        assert_abs_diff_eq!(out.grad_embeddings[(1, 1)], -1.0, epsilon = 1e-15);
        assert_eq!(state.mu, Some(2.0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn equal_norms_are_a_fixed_point() {
        let batch = b(&[[2.0, 0.0], [0.0, 2.0]]);
        let cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        let (out, _) = sec_loss(&batch, &cfg, &RegularizerState::default()).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad_embeddings.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fixed_mu_zero_equals_l2reg() {
        let batch = b(&[[3.0, 4.0], [-1.0, 2.0], [0.5, -0.2]]);
        let sec_cfg = RegularizerConfig::sec(1.0, MuMode::Fixed { value: 0.0 });
        let (sec_out, _) = sec_loss(&batch, &sec_cfg, &RegularizerState::default()).unwrap();
        let l2_out = l2_reg_loss(&batch, &RegularizerConfig::l2reg(1.0)).unwrap();
        assert_abs_diff_eq!(sec_out.value, l2_out.value, epsilon = 1e-12);
        for (a, bb) in sec_out
            .grad_embeddings
            .iter()
            .zip(l2_out.grad_embeddings.iter())
        {
            assert_abs_diff_eq!(a, bb, epsilon = 1e-12);
        }
    }

    #[test]
    fn l2reg_hand_values() {
        let batch = EmbeddingBatch::new(arr2(&[[3.0, 4.0]]), vec![0]).unwrap();
        let out = l2_reg_loss(&batch, &RegularizerConfig::l2reg(1.0)).unwrap();
        assert_abs_diff_eq!(out.value, 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.grad_embeddings[(0, 0)], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.grad_embeddings[(0, 1)], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn l2reg_unit_batch_value_one() {
        let batch = b(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        let out = l2_reg_loss(&batch, &RegularizerConfig::l2reg(1.0)).unwrap();
        assert_abs_diff_eq!(out.value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn l2reg_zero_row_contributes_nothing() {
        let batch = b(&[[0.0, 0.0], [3.0, 0.0]]);
        let out = l2_reg_loss(&batch, &RegularizerConfig::l2reg(1.0)).unwrap();
        assert_abs_diff_eq!(out.value, 4.5, epsilon = 1e-15);
        assert_eq!(out.grad_embeddings[(0, 0)], 0.0);
        assert_eq!(out.grad_embeddings[(0, 1)], 0.0);
    }

    #[test]
    fn sec_rejects_zero_rows() {
        let batch = b(&[[0.0, 0.0], [3.0, 0.0]]);
        let cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        assert_eq!(
            sec_loss(&batch, &cfg, &RegularizerState::default()).unwrap_err(),
            Error::ZeroNorm
        );
    }

    #[test]
    fn ema_rho_one_reproduces_batch_mean() {
        let batch = b(&[[3.0, 0.0], [0.0, 1.0], [2.0, 2.0]]);
        let mean_cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        let ema_cfg = RegularizerConfig::sec(1.0, MuMode::Ema { rho: 1.0 });
        // Pre-seed the EMA with an arbitrary radius; rho = 1 must erase it.
        let prev = RegularizerState {
            mu: Some(123.0),
            step: 9,
        };
        let (a, sa) = sec_loss(&batch, &mean_cfg, &RegularizerState::default()).unwrap();
        let (c, sc) = sec_loss(&batch, &ema_cfg, &prev).unwrap();
        assert_eq!(a.value, c.value);
        assert_eq!(a.grad_embeddings, c.grad_embeddings);
        assert_eq!(sa.mu, sc.mu);
    }

    #[test]
    fn ema_blends_previous_radius() {
        let batch = b(&[[3.0, 0.0], [0.0, 1.0]]); // batch mean 2
        let cfg = RegularizerConfig::sec(1.0, MuMode::Ema { rho: 0.25 });
        let prev = RegularizerState {
            mu: Some(4.0),
            step: 1,
        };
        let (_, next) = sec_loss(&batch, &cfg, &prev).unwrap();
        assert_abs_diff_eq!(next.mu.unwrap(), 0.75 * 4.0 + 0.25 * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn batch_mean_deviations_balance() {
        let batch = b(&[[3.0, 0.0], [0.0, 1.0], [1.5, 2.0], [0.3, 0.4]]);
        let units = batch.unit_rows().unwrap();
        let mean: f64 = units.iter().map(|u| u.source_norm).sum::<f64>() / units.len() as f64;
        let total: f64 = units.iter().map(|u| u.source_norm - mean).sum();
        assert!(total.abs() <= 1e-10);
    }

    #[test]
    fn sec_gradient_is_radial() {
        let batch = b(&[[3.0, 1.0], [-0.5, 1.2], [2.0, -2.5]]);
        let cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        let (out, _) = sec_loss(&batch, &cfg, &RegularizerState::default()).unwrap();
        for i in 0..batch.n() {
            let f = batch.row(i);
            let g = out.grad_embeddings.row(i);
            let g_norm: f64 = g.dot(&g).sqrt();
            if g_norm == 0.0 {
                continue;
            }
            let f_norm: f64 = f.dot(&f).sqrt();
            // Rejection of g from the direction of f must vanish.
            let radial = f.dot(&g) / (f_norm * f_norm);
            let rejection: f64 = f
                .iter()
                .zip(g.iter())
                .map(|(fi, gi)| {
                    let r = gi - radial * fi;
                    r * r
                })
                .sum::<f64>()
                .sqrt();
            assert!(rejection <= 1e-12 * g_norm);
        }
    }

    #[test]
    fn schedule_values() {
        let mut cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        cfg.schedule = EtaSchedule::Constant;
        assert_eq!(eta_schedule(&cfg, 123, 1000).unwrap(), 1.0);

        cfg.schedule = EtaSchedule::LinearRamp;
        assert_eq!(eta_schedule(&cfg, 1000, 1000).unwrap(), 1.0);
        assert_eq!(eta_schedule(&cfg, 250, 1000).unwrap(), 0.25);

        cfg.schedule = EtaSchedule::CappedRamp;
        // 500 * 20 / 10000 = 1 exactly: the cap engages from here on.
        assert_eq!(eta_schedule(&cfg, 20, 10000).unwrap(), 1.0);
        assert_eq!(eta_schedule(&cfg, 10, 10000).unwrap(), 0.5);

        cfg.schedule = EtaSchedule::WarmupEpochs {
            start_epoch: 3,
            total_epochs: 16,
        };
        let total = 1600; // 100 iterations per epoch
        assert_eq!(eta_schedule(&cfg, 0, total).unwrap(), 0.0);
        assert_eq!(eta_schedule(&cfg, 299, total).unwrap(), 0.0);
        assert_abs_diff_eq!(
            eta_schedule(&cfg, 350, total).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(eta_schedule(&cfg, 400, total).unwrap(), 1.0);
        assert_eq!(eta_schedule(&cfg, 1599, total).unwrap(), 1.0);
    }

    #[test]
    fn zero_total_is_bad_schedule() {
        let cfg = RegularizerConfig::sec(1.0, MuMode::BatchMean);
        assert_eq!(eta_schedule(&cfg, 0, 0).unwrap_err(), Error::BadSchedule);
    }
}
