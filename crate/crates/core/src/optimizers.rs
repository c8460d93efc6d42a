//! From-scratch SGD, SGD with momentum, and Adam, plus the analyzer that
//! relates a step to the induced change of embedding direction.
//!
//! The momentum rule is `v' = beta v + g; f' = f - alpha v'` (no dampening).
//! Adam ships in two second-moment flavors: the standard per-coordinate
//! accumulator, and a per-row scalar accumulating `||g_row||^2`, which is
//! the form the direction-update predictions are derived for. Training
//! defaults to per-coordinate; the analyzer uses per-row.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::batch::{l2_normalize, unit_cosine, MIN_NORM};
use crate::error::{Error, Result};
use crate::losses::PairGradient;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamSecondMoment {
    /// One accumulator per parameter coordinate (standard practice).
    PerCoordinate,
    /// One scalar per row, accumulating the squared row-gradient norm.
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig<T: Real> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    /// Momentum coefficient (momentum kind only).
    pub beta: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub adam_second_moment: AdamSecondMoment,
}

impl<T: Real> Default for OptimizerConfig<T> {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate: T::from_f64(0.01).unwrap(),
            beta: T::from_f64(0.9).unwrap(),
            beta1: T::from_f64(0.9).unwrap(),
            beta2: T::from_f64(0.999).unwrap(),
            epsilon: T::from_f64(1e-8).unwrap(),
            adam_second_moment: AdamSecondMoment::PerCoordinate,
        }
    }
}

impl<T: Real> OptimizerConfig<T> {
    pub fn sgd(learning_rate: T) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn momentum(learning_rate: T, beta: T) -> Self {
        Self {
            kind: OptimizerKind::Momentum,
            learning_rate,
            beta,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: T) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam_literal(learning_rate: T) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            adam_second_moment: AdamSecondMoment::PerRow,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok01 = |x: T| x >= T::zero() && x < T::one();
        // Zero is allowed so a frozen-parameter run is expressible.
        if self.learning_rate < T::zero() {
            return Err(Error::BadParams(
                "learning rate must be non-negative".into(),
            ));
        }
        if !ok01(self.beta) || !ok01(self.beta1) || !ok01(self.beta2) {
            return Err(Error::BadParams(
                "momentum/decay rates must lie in [0, 1)".into(),
            ));
        }
        if self.epsilon <= T::zero() {
            return Err(Error::BadParams("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Second-moment accumulator matching `cfg.adam_second_moment`.
#[derive(Debug, Clone, PartialEq)]
pub enum SecondMoment<T: Real> {
    PerCoordinate(Array2<T>),
    PerRow(Array1<T>),
}

/// Per-parameter optimizer accumulators. `t` counts completed steps, so the
/// first step applies bias corrections with exponent 1.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub v: Array2<T>,
    pub second: SecondMoment<T>,
    pub t: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(cfg: &OptimizerConfig<T>, shape: (usize, usize)) -> Self {
        let second = match cfg.adam_second_moment {
            AdamSecondMoment::PerCoordinate => SecondMoment::PerCoordinate(Array2::zeros(shape)),
            AdamSecondMoment::PerRow => SecondMoment::PerRow(Array1::zeros(shape.0)),
        };
        Self {
            v: Array2::zeros(shape),
            second,
            t: 0,
        }
    }
}

/// One optimizer step; returns the updated parameters and state.
pub fn optimizer_step<T: Real>(
    params: &Array2<T>,
    grads: &Array2<T>,
    cfg: &OptimizerConfig<T>,
    state: &OptimizerState<T>,
) -> Result<(Array2<T>, OptimizerState<T>)> {
    cfg.validate()?;
    if params.dim() != grads.dim() || params.dim() != state.v.dim() {
        return Err(Error::ShapeMismatch {
            expected: params.dim(),
            got: grads.dim(),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }

    let alpha = cfg.learning_rate;
    let t_new = state.t + 1;
    match cfg.kind {
        OptimizerKind::Sgd => {
            let next = params - &(grads * alpha);
            Ok((
                next,
                OptimizerState {
                    v: state.v.clone(),
                    second: state.second.clone(),
                    t: t_new,
                },
            ))
        }
        OptimizerKind::Momentum => {
            let v_next = &(&state.v * cfg.beta) + grads;
            let next = params - &(&v_next * alpha);
            Ok((
                next,
                OptimizerState {
                    v: v_next,
                    second: state.second.clone(),
                    t: t_new,
                },
            ))
        }
        OptimizerKind::Adam => {
            let one = T::one();
            let v_next = &(&state.v * cfg.beta1) + &(grads * (one - cfg.beta1));
            let bc1 = one - cfg.beta1.powi(t_new as i32);
            let bc2 = one - cfg.beta2.powi(t_new as i32);
            match &state.second {
                SecondMoment::PerCoordinate(g2) => {
                    let g2_next = &(g2 * cfg.beta2) + &(grads.map(|g| *g * *g) * (one - cfg.beta2));
                    let mut next = params.clone();
                    ndarray::Zip::from(&mut next)
                        .and(&v_next)
                        .and(&g2_next)
                        .for_each(|p, &v, &g2| {
                            let v_hat = v / bc1;
                            let g_hat = (g2 / bc2).sqrt();
                            *p = *p - alpha * v_hat / (g_hat + cfg.epsilon);
                        });
                    Ok((
                        next,
                        OptimizerState {
                            v: v_next,
                            second: SecondMoment::PerCoordinate(g2_next),
                            t: t_new,
                        },
                    ))
                }
                SecondMoment::PerRow(g2) => {
                    let mut g2_next = g2.clone();
                    let mut next = params.clone();
                    for (r, mut row) in next.rows_mut().into_iter().enumerate() {
                        let grow = grads.row(r);
                        let sq = grow.dot(&grow);
                        g2_next[r] = cfg.beta2 * g2[r] + (one - cfg.beta2) * sq;
                        let denom = (g2_next[r] / bc2).sqrt() + cfg.epsilon;
                        for (d, p) in row.iter_mut().enumerate() {
                            let v_hat = v_next[(r, d)] / bc1;
                            *p = *p - alpha * v_hat / denom;
                        }
                    }
                    Ok((
                        next,
                        OptimizerState {
                            v: v_next,
                            second: SecondMoment::PerRow(g2_next),
                            t: t_new,
                        },
                    ))
                }
            }
        }
    }
}

/// Angular change between two directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionDelta<T: Real> {
    /// In `[0, pi]`.
    pub delta_theta: T,
    /// `tan(delta_theta)`; saturates to infinity at or beyond a right angle.
    pub tan_delta_theta: T,
}

impl<T: Real> DirectionDelta<T> {
    fn from_tan(tan: T) -> Self {
        Self {
            delta_theta: tan.atan(),
            tan_delta_theta: tan,
        }
    }
}

/// `delta_theta = arccos(<f_before_hat, f_after_hat>)`.
pub fn measure_direction_change<T: Real>(
    f_before: ArrayView1<'_, T>,
    f_after: ArrayView1<'_, T>,
) -> Result<DirectionDelta<T>> {
    let ub = l2_normalize(f_before)?;
    let ua = l2_normalize(f_after)?;
    let delta = unit_cosine(&ub, &ua).acos();
    let tan = if delta < T::from_f64(std::f64::consts::FRAC_PI_2).unwrap() {
        delta.tan()
    } else {
        T::infinity()
    };
    Ok(DirectionDelta {
        delta_theta: delta,
        tan_delta_theta: tan,
    })
}

/// Closed-form tangent of the direction change a unit-learning-rate SGD step
/// would induce on `f_i`, from that embedding's pair records:
///
/// ```text
/// tan(delta_theta) = || sum_j phi_ij angular_grad_ij || / ||f_i||^2
/// ```
///
/// Only the norm of `f_i` enters, so rescaling the embedding (pair geometry
/// held fixed) rescales the tangent by exactly the inverse square.
pub fn tan_delta_closed_form<T: Real>(
    f_i: ArrayView1<'_, T>,
    pair_grads: &[PairGradient<T>],
) -> Result<DirectionDelta<T>> {
    let norm_sq = f_i.dot(&f_i);
    if !norm_sq.is_finite() || norm_sq.sqrt() <= T::from_f64(MIN_NORM).unwrap() {
        return Err(Error::ZeroNorm);
    }
    if pair_grads.is_empty() {
        return Ok(DirectionDelta::from_tan(T::zero()));
    }
    let dim = pair_grads[0].angular_grad.len();
    let mut sum: Array1<T> = Array1::zeros(dim);
    for rec in pair_grads {
        sum.zip_mut_with(&rec.angular_grad, |s, a| *s = *s + rec.phi * *a);
    }
    let tan = sum.dot(&sum).sqrt() / norm_sq;
    Ok(DirectionDelta::from_tan(tan))
}

/// First-order prediction of the next unit direction under the configured
/// optimizer, given the gradient w.r.t. the unit embedding `dL/df_hat`.
///
/// The `O(alpha^2)` remainder is dropped, so the result is generally not
/// exactly unit norm. For Adam the prediction is derived for the per-row
/// scalar second moment and neglects `epsilon`.
pub fn predicted_unit_update<T: Real>(
    f_t: ArrayView1<'_, T>,
    grad_wrt_unit: ArrayView1<'_, T>,
    cfg: &OptimizerConfig<T>,
    state: &OptimizerState<T>,
) -> Result<Array1<T>> {
    cfg.validate()?;
    let unit = l2_normalize(f_t)?;
    let norm = unit.source_norm;
    let fhat = &unit.direction;
    let project = |x: ArrayView1<'_, T>| -> Array1<T> {
        let coeff = fhat.dot(&x);
        let mut out = x.to_owned();
        out.zip_mut_with(fhat, |o, h| *o = *o - coeff * *h);
        out
    };

    let pg = project(grad_wrt_unit);
    let alpha = cfg.learning_rate;
    match cfg.kind {
        OptimizerKind::Sgd => {
            let step = alpha / (norm * norm);
            Ok(fhat - &(&pg * step))
        }
        OptimizerKind::Momentum => {
            if state.v.nrows() != 1 || state.v.ncols() != f_t.len() {
                return Err(Error::ShapeMismatch {
                    expected: (1, f_t.len()),
                    got: state.v.dim(),
                });
            }
            let mut inner = &state.v.row(0) * (norm * cfg.beta);
            inner.zip_mut_with(&pg, |i, p| *i = *i + *p);
            let proj = project(inner.view());
            let step = alpha / (norm * norm);
            Ok(fhat - &(&proj * step))
        }
        OptimizerKind::Adam => {
            let g_scalar = match &state.second {
                SecondMoment::PerRow(g) if g.len() == 1 => g[0],
                _ => {
                    return Err(Error::BadParams(
                        "direction prediction requires the per-row Adam second moment".into(),
                    ))
                }
            };
            if state.v.nrows() != 1 || state.v.ncols() != f_t.len() {
                return Err(Error::ShapeMismatch {
                    expected: (1, f_t.len()),
                    got: state.v.dim(),
                });
            }
            let one = T::one();
            let t_new = state.t + 1;
            let bc1 = one - cfg.beta1.powi(t_new as i32);
            let bc2 = one - cfg.beta2.powi(t_new as i32);
            let mut inner = &state.v.row(0) * (norm * cfg.beta1);
            inner.zip_mut_with(&pg, |i, p| *i = *i + (one - cfg.beta1) * *p);
            let numer = project(inner.view()) * bc2.sqrt();
            let denom =
                bc1 * (norm * norm * cfg.beta2 * g_scalar + (one - cfg.beta2) * pg.dot(&pg)).sqrt();
            let step = alpha / norm;
            Ok(fhat - &(&numer * (step / denom)))
        }
    }
}
