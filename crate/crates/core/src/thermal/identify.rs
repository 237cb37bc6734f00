//! Least-squares fit of an ARX(n) model, realized in observable canonical form.
//!
//! The regression is `y_{k+1} = Σᵢ aᵢ y_{k+1−i} + bᵢ u_{k+1−i} + rᵢ w_{k+1−i} + dᵢᵀ d_{k+1−i}`
//! for `i = 1..n`. The realization has `A = [a | I; a_n | 0]`, so the first state is the
//! room temperature and the remaining states are exact functions of past data.

use nalgebra::{DMatrix, DVector};

use super::ThermalModel;
use crate::error::{Error, Result};

/// Largest accepted condition number of the column-scaled regressor matrix.
const MAX_CONDITION: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationSample {
    pub room_c: f64,
    /// PV power applied during the step that starts at this sample.
    pub u_w: f64,
    /// Grid power applied during the step that starts at this sample.
    pub w_w: f64,
    pub d: Vec<f64>,
}

pub fn identify_model(
    samples: &[IdentificationSample],
    order: usize,
    sample_period_s: f64,
    cop: f64,
) -> Result<ThermalModel> {
    if order == 0 {
        return Err(Error::InvalidArgument("model order must be at least one".into()));
    }
    let p = samples.first().map(|s| s.d.len()).unwrap_or(0);
    if samples.iter().any(|s| s.d.len() != p) {
        return Err(Error::DimensionMismatch("samples carry different disturbance lengths".into()));
    }
    let per_lag = 3 + p;
    let n_params = order * per_lag;
    let rows = samples.len().saturating_sub(order);
    if rows < 10 * n_params {
        return Err(Error::InvalidArgument(format!(
            "{rows} regression rows for {n_params} parameters; need at least {}",
            10 * n_params
        )));
    }

    for (name, values) in [
        ("PV power", samples.iter().map(|s| s.u_w).collect::<Vec<_>>()),
        ("grid power", samples.iter().map(|s| s.w_w).collect()),
    ]
    .into_iter()
    .chain((0..p).map(|j| ("disturbance", samples.iter().map(|s| s.d[j]).collect())))
    {
        let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo <= 1e-9 * (1.0 + hi.abs().max(lo.abs())) {
            return Err(Error::IllConditioned(format!("{name} input is constant over the record")));
        }
    }

    // Column layout per lag i: [y, u, w, d_1..d_p].
    let mut x = DMatrix::zeros(rows, n_params);
    let mut y = DVector::zeros(rows);
    for k in 0..rows {
        let now = k + order - 1;
        y[k] = samples[now + 1].room_c;
        for i in 0..order {
            let s = &samples[now - i];
            let base = i * per_lag;
            x[(k, base)] = s.room_c;
            x[(k, base + 1)] = s.u_w;
            x[(k, base + 2)] = s.w_w;
            for j in 0..p {
                x[(k, base + 3 + j)] = s.d[j];
            }
        }
    }

    let scale: Vec<f64> = (0..n_params).map(|j| x.column(j).amax().max(f64::MIN_POSITIVE)).collect();
    for (j, s) in scale.iter().enumerate() {
        x.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = x.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smin > 0.0) || smax / smin > MAX_CONDITION {
        return Err(Error::IllConditioned(format!("regressor condition number {:.3e}", smax / smin)));
    }
    let theta_scaled = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::IllConditioned(format!("least squares failed: {e}")))?;
    let theta: Vec<f64> = theta_scaled.iter().zip(&scale).map(|(t, s)| t / s).collect();
    let ls = realize(&theta, order, p, sample_period_s, cop)?;
    if samples.len() < 4 * REFINE_HORIZON {
        return Ok(ls);
    }
    Ok(refine_multistep(theta, &scale, samples, order, p, sample_period_s, cop).unwrap_or(ls))
}

/// Prediction horizon of the refinement step, in samples.
pub const REFINE_HORIZON: usize = 24;
const REFINE_STRIDE: usize = 6;

fn realize(theta: &[f64], order: usize, p: usize, sample_period_s: f64, cop: f64) -> Result<ThermalModel> {
    let per_lag = 3 + p;
    let n = order;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut r = DMatrix::zeros(n, 1);
    let mut d = DMatrix::zeros(n, p);
    for i in 0..n {
        let base = i * per_lag;
        a[(i, 0)] = theta[base];
        if i + 1 < n {
            a[(i, i + 1)] = 1.0;
        }
        b[(i, 0)] = theta[base + 1];
        r[(i, 0)] = theta[base + 2];
        for j in 0..p {
            d[(i, j)] = theta[base + 3 + j];
        }
    }
    ThermalModel::new(a, b, r, d, sample_period_s, cop, 0)
}

/// Errors of free-running predictions started every `stride` samples from the
/// estimator state, at every step up to `horizon` or only at `horizon`.
fn multistep_errors(model: &ThermalModel, samples: &[IdentificationSample], horizon: usize, stride: usize, every_step: bool) -> Vec<f64> {
    let first = &samples[0];
    let mut est = StateEstimator::new(model, first.room_c, first.u_w, first.w_w, &first.d);
    let mut out = Vec::new();
    for k in 0..samples.len() - horizon {
        if k >= model.n() && (k - model.n()) % stride == 0 {
            let mut x = est.x.clone();
            for (i, s) in samples[k..k + horizon].iter().enumerate() {
                x = model.step(&x, s.u_w, s.w_w, &s.d);
                if every_step || i + 1 == horizon {
                    out.push(model.room(&x) - samples[k + i + 1].room_c);
                }
            }
        }
        let s = &samples[k];
        est.update(model, s.u_w, s.w_w, &s.d, samples[k + 1].room_c);
    }
    out
}

/// Levenberg-Marquardt on the ARX coefficients against `REFINE_HORIZON`-step
/// prediction errors, starting from the least-squares fit. One-step fits of a
/// reduced-order model favour the fastest mode; this shifts the fit toward the
/// slower dynamics that matter over a flexibility window.
fn refine_multistep(
    theta: Vec<f64>,
    scale: &[f64],
    samples: &[IdentificationSample],
    order: usize,
    p: usize,
    sample_period_s: f64,
    cop: f64,
) -> Option<ThermalModel> {
    let q = theta.len();
    // Work in regressor-scaled coordinates so every coordinate is O(1).
    let to_theta = |z: &DVector<f64>| -> Vec<f64> { z.iter().zip(scale).map(|(v, s)| v / s).collect() };
    let residuals = |z: &DVector<f64>| -> Option<DVector<f64>> {
        let model = realize(&to_theta(z), order, p, sample_period_s, cop).ok()?;
        Some(DVector::from_vec(multistep_errors(&model, samples, REFINE_HORIZON, REFINE_STRIDE, true)))
    };
    let mut z = DVector::from_iterator(q, theta.iter().zip(scale).map(|(t, s)| t * s));
    let mut r = residuals(&z)?;
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..40 {
        let mut jac = DMatrix::zeros(r.len(), q);
        for j in 0..q {
            let step = 1e-7 * z[j].abs().max(1e-3);
            let mut zp = z.clone();
            zp[j] += step;
            let rp = residuals(&zp)?;
            jac.set_column(j, &((rp - &r) / step));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        while mu < 1e8 {
            let mut lhs = jtj.clone();
            for i in 0..q {
                lhs[(i, i)] += mu * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = lhs.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let trial = &z + delta;
            match residuals(&trial) {
                Some(rt) if rt.norm_squared() < cost => {
                    let new_cost = rt.norm_squared();
                    let done = cost - new_cost <= 1e-10 * cost;
                    z = trial;
                    r = rt;
                    cost = new_cost;
                    mu = (mu / 10.0).max(1e-12);
                    improved = !done;
                    break;
                }
                _ => mu *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    realize(&to_theta(&z), order, p, sample_period_s, cop).ok()
}

/// Room-temperature RMSE at the end of `horizon`-step free-running predictions, one
/// started at every sample.
pub fn multistep_rmse(model: &ThermalModel, samples: &[IdentificationSample], horizon: usize) -> f64 {
    if samples.len() <= horizon + model.n() {
        return 0.0;
    }
    let e = multistep_errors(model, samples, horizon, 1, false);
    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
}

/// Tracks the control-model state from room-temperature measurements.
///
/// For canonical-form models the hidden states are functions of past data, so
/// propagating the model and overwriting the room component with the measurement
/// reconstructs them exactly once `n` samples have been seen.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimator {
    pub x: DVector<f64>,
}

impl StateEstimator {
    /// Starts from the state consistent with constant inputs and the measured room temperature.
    pub fn new(model: &ThermalModel, room_c: f64, u: f64, w: f64, d: &[f64]) -> Self {
        let n = model.n();
        let ri = model.room_index;
        let rest: Vec<usize> = (0..n).filter(|&i| i != ri).collect();
        let forced = model.step(&DVector::zeros(n), u, w, d);
        let mut x = DVector::zeros(n);
        x[ri] = room_c;
        if !rest.is_empty() {
            let m = rest.len();
            let lhs = DMatrix::from_fn(m, m, |i, j| f64::from(i == j) - model.a[(rest[i], rest[j])]);
            let rhs = DVector::from_fn(m, |i, _| model.a[(rest[i], ri)] * room_c + forced[rest[i]]);
            if let Some(z) = lhs.lu().solve(&rhs) {
                for (k, &i) in rest.iter().enumerate() {
                    x[i] = z[k];
                }
            }
        }
        Self { x }
    }

    pub fn predict(&self, model: &ThermalModel, u: f64, w: f64, d: &[f64]) -> DVector<f64> {
        model.step(&self.x, u, w, d)
    }

    pub fn update(&mut self, model: &ThermalModel, u: f64, w: f64, d: &[f64], room_measured: f64) {
        self.x = model.step(&self.x, u, w, d);
        self.x[model.room_index] = room_measured;
    }
}

/// One-step-ahead room-temperature RMSE over `samples`, after an `n`-sample warm-up.
pub fn one_step_rmse(model: &ThermalModel, samples: &[IdentificationSample]) -> f64 {
    let Some(first) = samples.first() else {
        return 0.0;
    };
    let mut est = StateEstimator::new(model, first.room_c, first.u_w, first.w_w, &first.d);
    let warmup = model.n();
    let (mut sum, mut count) = (0.0, 0usize);
    for k in 0..samples.len() - 1 {
        let s = &samples[k];
        let next = samples[k + 1].room_c;
        if k >= warmup {
            let pred = model.room(&est.predict(model, s.u_w, s.w_w, &s.d));
            sum += (pred - next).powi(2);
            count += 1;
        }
        est.update(model, s.u_w, s.w_w, &s.d, next);
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}
