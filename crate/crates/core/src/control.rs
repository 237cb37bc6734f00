//! Building-side optimizers: the nominal grid-power schedule, DR request handling and
//! the 5-minute tracking controller for local PV power.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraints::{FlexibilitySet, OperatingConstraints, Placement};
use crate::error::{Error, Result};
use crate::lp::{solve_lp_with, LinearProgram, LpStatus, SolverOptions};
use crate::robust::AffinePolicy;
use crate::thermal::ThermalModel;

/// Seconds per hour times watts per kilowatt.
const JOULES_PER_KWH: f64 = 3.6e6;

/// Tolerance on the request's membership in 𝒲, W.
pub const REQUEST_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalSettings {
    pub setpoint: f64,
    /// Comfort weight, $ per °C of deviation per step.
    pub lambda: f64,
    /// When set, comfort bounds become soft with this cost per °C per step.
    pub comfort_penalty: Option<f64>,
    /// Cost of changing the grid power between consecutive steps, $ per kW.
    /// Keeps the plan from chattering when the model has a sampling zero near −1.
    pub move_penalty: f64,
    /// Per-channel forecast-error bound. Over the first `margin_steps` steps the
    /// comfort band is narrowed by the largest open-loop effect such errors can have
    /// on the room; empty means no margin.
    pub disturbance_bound: Vec<f64>,
    pub margin_steps: usize,
}

impl Default for NominalSettings {
    fn default() -> Self {
        Self { setpoint: 21.0, lambda: 0.1, comfort_penalty: None, move_penalty: 0.02, disturbance_bound: Vec::new(), margin_steps: 0 }
    }
}

/// Worst-case room-temperature shift after each of `horizon` steps when every
/// disturbance channel may be off by up to its bound, with the inputs held.
pub fn comfort_backoff(model: &ThermalModel, bound: &[f64], horizon: usize) -> Result<Vec<f64>> {
    if bound.is_empty() {
        return Ok(vec![0.0; horizon]);
    }
    if bound.len() != model.p() || bound.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::InvalidArgument(format!("need {} nonnegative disturbance bounds", model.p())));
    }
    let mut reach = model.d.clone();
    let mut total = 0.0;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        total += (0..model.p()).map(|c| reach[(model.room_index, c)].abs() * bound[c]).sum::<f64>();
        out.push(total);
        reach = &model.a * reach;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalSchedule {
    pub w_bar: DVector<f64>,
    /// Planned PV power; the tracking controller decides the applied value.
    pub u_plan: DVector<f64>,
    /// Predicted room temperature after each step.
    pub room_temp: DVector<f64>,
    pub energy_cost: f64,
    pub comfort_cost: f64,
    /// Sum of planned comfort-bound violations, °C·steps (zero with hard bounds).
    pub planned_violation: f64,
}

impl NominalSchedule {
    pub fn horizon(&self) -> usize {
        self.w_bar.len()
    }
}

/// Price-aware grid-power plan over the constraint horizon.
///
/// Minimizes `Σ price·w·Δt + λ Σ |T − setpoint| + μ Σ |Δw|` under the model dynamics with the
/// forecast disturbances, the comfort band, `0 ≤ u ≤ pv`, `0 ≤ w` and `u + w ≤ cap`.
/// Powers are optimized in kW.
pub fn compute_nominal_schedule(
    model: &ThermalModel,
    x0: &DVector<f64>,
    price: &[f64],
    d_forecast: &[f64],
    constraints: &OperatingConstraints,
    settings: &NominalSettings,
    solver: &SolverOptions,
) -> Result<NominalSchedule> {
    let n_steps = constraints.horizon;
    let n = model.n();
    let p = model.p();
    if price.len() != n_steps || d_forecast.len() != p * n_steps || x0.len() != n || constraints.n != n {
        return Err(Error::DimensionMismatch(format!(
            "nominal schedule: horizon {n_steps}, got {} prices, {} disturbances, state {}",
            price.len(),
            d_forecast.len(),
            x0.len()
        )));
    }
    if price.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("prices must be finite and nonnegative".into()));
    }
    let dt_h = model.sample_period_s / 3600.0;
    let room = model.room_index;
    let cap_kw = constraints.total_power_cap / 1000.0;
    let mut backoff = comfort_backoff(model, &settings.disturbance_bound, settings.margin_steps.min(n_steps))?;
    backoff.resize(n_steps, 0.0);
    let (lower, upper): (Vec<f64>, Vec<f64>) =
        backoff.iter().map(|b| (constraints.comfort_lower + b, constraints.comfort_upper - b)).unzip();

    // Layout: u (kW), w (kW), x_1..x_N, |T − setpoint| epigraphs, then optional slacks.
    let (u0, w0, x_off, e_off) = (0, n_steps, 2 * n_steps, 2 * n_steps + n * n_steps);
    let m_off = e_off + n_steps;
    let slack = settings.comfort_penalty.map(|_| m_off + n_steps);
    let num_vars = m_off + n_steps + if slack.is_some() { 2 * n_steps } else { 0 };
    let mut lp = LinearProgram::new(num_vars);
    let x = |k: usize, i: usize| x_off + k * n + i;

    for t in 0..n_steps {
        lp.set_bounds(u0 + t, 0.0, constraints.pv_upper[t] / 1000.0);
        lp.set_bounds(w0 + t, 0.0, cap_kw);
        lp.objective[w0 + t] = price[t] * dt_h;
        lp.objective[e_off + t] = settings.lambda;
        lp.add_ineq(&[(u0 + t, 1.0), (w0 + t, 1.0)], cap_kw);
        lp.set_bounds(m_off + t, 0.0, if t > 0 && settings.move_penalty > 0.0 { f64::INFINITY } else { 0.0 });
        if t > 0 && settings.move_penalty > 0.0 {
            lp.objective[m_off + t] = settings.move_penalty;
            lp.add_ineq(&[(w0 + t, 1.0), (w0 + t - 1, -1.0), (m_off + t, -1.0)], 0.0);
            lp.add_ineq(&[(w0 + t, -1.0), (w0 + t - 1, 1.0), (m_off + t, -1.0)], 0.0);
        }

        let d = &d_forecast[t * p..(t + 1) * p];
        let drive = &model.d * DVector::from_column_slice(d);
        let free = if t == 0 { &model.a * x0 } else { DVector::zeros(n) };
        for i in 0..n {
            let mut eq = vec![(x(t, i), 1.0), (u0 + t, -1000.0 * model.b[(i, 0)]), (w0 + t, -1000.0 * model.r[(i, 0)])];
            if t > 0 {
                eq.extend((0..n).filter(|&j| model.a[(i, j)] != 0.0).map(|j| (x(t - 1, j), -model.a[(i, j)])));
            }
            lp.add_eq(&eq, drive[i] + free[i]);
        }

        let xr = x(t, room);
        lp.add_ineq(&[(xr, 1.0), (e_off + t, -1.0)], settings.setpoint);
        lp.add_ineq(&[(xr, -1.0), (e_off + t, -1.0)], -settings.setpoint);
        match (slack, settings.comfort_penalty) {
            (Some(s), Some(rho)) => {
                lp.set_bounds(s + t, 0.0, f64::INFINITY);
                lp.set_bounds(s + n_steps + t, 0.0, f64::INFINITY);
                lp.objective[s + t] = rho;
                lp.objective[s + n_steps + t] = rho;
                lp.add_ineq(&[(xr, 1.0), (s + t, -1.0)], upper[t]);
                lp.add_ineq(&[(xr, -1.0), (s + n_steps + t, -1.0)], -lower[t]);
            }
            _ => {
                lp.add_ineq(&[(xr, 1.0)], upper[t]);
                lp.add_ineq(&[(xr, -1.0)], -lower[t]);
            }
        }
    }

    let sol = solve_lp_with(&lp, solver)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::InfeasibleNominal("comfort band unreachable under the forecasts".into()));
        }
        LpStatus::Unbounded => return Err(Error::Numerical("nominal schedule reported unbounded".into())),
    }
    let xs = &sol.primal;
    // Clip solver round-off so the schedule honours its bounds exactly.
    let w_bar = DVector::from_fn(n_steps, |t, _| (1000.0 * xs[w0 + t]).clamp(0.0, constraints.total_power_cap));
    let u_plan = DVector::from_fn(n_steps, |t, _| (1000.0 * xs[u0 + t]).clamp(0.0, constraints.pv_upper[t]));
    let room_temp = DVector::from_fn(n_steps, |t, _| xs[x(t, room)]);
    let energy_cost = (0..n_steps).map(|t| price[t] * w_bar[t] * model.sample_period_s / JOULES_PER_KWH).sum();
    let comfort_cost = settings.lambda * room_temp.iter().map(|v| (v - settings.setpoint).abs()).sum::<f64>();
    let planned_violation = room_temp
        .iter()
        .map(|v| (constraints.comfort_lower - v).max(0.0) + (v - constraints.comfort_upper).max(0.0))
        .sum();
    Ok(NominalSchedule { w_bar, u_plan, room_temp, energy_cost, comfort_cost, planned_violation })
}

/// Grid-power reduction request sent by the grid operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrRequest {
    pub window_start_iso: String,
    pub h: usize,
    /// Reduction per window step, W (nonpositive).
    pub profile_w: Vec<f64>,
}

impl DrRequest {
    pub fn constant(window_start_iso: impl Into<String>, h: usize, reduction: f64) -> Self {
        Self { window_start_iso: window_start_iso.into(), h, profile_w: vec![-reduction.abs(); h] }
    }

    pub fn is_null(&self) -> bool {
        self.profile_w.iter().all(|r| *r == 0.0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("request serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        Ok(serde_json::from_value(value.clone())?)
    }
}

/// `𝐰 = 𝐰̄ + M r` after checking `r ∈ 𝒲`.
pub fn apply_dr_request(
    w_bar: &DVector<f64>,
    request: &DrRequest,
    placement: &Placement,
    advertised: &FlexibilitySet,
) -> Result<DVector<f64>> {
    if request.h != placement.len || request.profile_w.len() != placement.len || w_bar.len() != placement.horizon {
        return Err(Error::DimensionMismatch(format!(
            "request of length {} (h = {}) for a window of {} in a horizon of {}",
            request.profile_w.len(),
            request.h,
            placement.len,
            placement.horizon
        )));
    }
    let r = DVector::from_column_slice(&request.profile_w);
    if !advertised.contains(&r, REQUEST_TOL) {
        return Err(Error::InfeasibleRequest(advertised.max_violation(&r)));
    }
    Ok(placement.inject(w_bar, &r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackingMode {
    /// Re-solve a short comfort-tracking program every step.
    #[default]
    Reoptimize,
    /// Apply the certified affine policy to the realized uncertainties.
    Policy,
}

/// Affine policy together with what has been observed since its window started.
#[derive(Debug, Clone, Copy)]
pub struct PolicyState<'a> {
    pub policy: &'a AffinePolicy,
    /// Step index within the policy horizon.
    pub step: usize,
    pub w_tilde: &'a DVector<f64>,
    /// Forecast errors; entries at or after `step` are never read.
    pub d_tilde: &'a DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TrackingContext<'a> {
    pub model: &'a ThermalModel,
    pub x_now: &'a DVector<f64>,
    /// Committed grid power from now on, W; its length is the tracking horizon.
    pub w_committed: &'a [f64],
    pub d_forecast: &'a [f64],
    /// Available PV from now on, W; the first entry is the measured value.
    pub pv: &'a [f64],
    pub comfort: (f64, f64),
    pub total_power_cap: f64,
    pub setpoint: f64,
    /// Cost per °C per step of leaving the comfort band.
    pub comfort_penalty: f64,
    pub policy: Option<PolicyState<'a>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingOutcome {
    pub u: f64,
    /// The preferred action was not admissible and the nearest admissible one was used.
    pub flagged: bool,
}

/// `[max(0, −w), min(pv, cap − w)]`: the PV power compatible with the committed grid power.
fn admissible_range(pv: f64, w: f64, cap: f64) -> (f64, f64) {
    ((-w).max(0.0), pv.min(cap - w))
}

/// Nearest admissible PV power: the box `[0, pv]` has priority over the mixed limits.
fn nearest_admissible(u: f64, pv: f64, w: f64, cap: f64) -> f64 {
    let (lo, hi) = admissible_range(pv, w, cap);
    let u = if lo <= hi { u.clamp(lo, hi) } else if u < lo { lo } else { hi };
    u.clamp(0.0, pv.max(0.0))
}

pub fn tracking_control_step(ctx: &TrackingContext, mode: TrackingMode, solver: &SolverOptions) -> Result<TrackingOutcome> {
    if ctx.w_committed.is_empty() || ctx.pv.len() != ctx.w_committed.len() {
        return Err(Error::DimensionMismatch("tracking needs matching, nonempty w and pv horizons".into()));
    }
    let (pv_now, w_now) = (ctx.pv[0], ctx.w_committed[0]);
    match mode {
        TrackingMode::Policy => {
            let state = ctx.policy.ok_or_else(|| Error::InvalidArgument("policy mode needs a policy".into()))?;
            if state.step >= state.policy.horizon() {
                return Err(Error::InvalidArgument(format!(
                    "step {} is past the policy horizon {}",
                    state.step,
                    state.policy.horizon()
                )));
            }
            let raw = state.policy.action(state.step, state.w_tilde, state.d_tilde);
            let u = nearest_admissible(raw, pv_now, w_now, ctx.total_power_cap);
            Ok(TrackingOutcome { u, flagged: (u - raw).abs() > 1e-9 * (1.0 + raw.abs()) })
        }
        TrackingMode::Reoptimize => reoptimize(ctx, solver),
    }
}

/// Short-horizon program over `u` with `w` frozen: minimize `Σ|T − setpoint|` plus a
/// large penalty on leaving the comfort band.
fn reoptimize(ctx: &TrackingContext, solver: &SolverOptions) -> Result<TrackingOutcome> {
    let model = ctx.model;
    let n_steps = ctx.w_committed.len();
    let (n, p, room) = (model.n(), model.p(), model.room_index);
    if ctx.d_forecast.len() != p * n_steps || ctx.x_now.len() != n {
        return Err(Error::DimensionMismatch("tracking forecast or state has the wrong size".into()));
    }
    let mut flagged = false;
    // Layout: u (kW), x_1..x_H, |T − setpoint| epigraphs, lower and upper slacks.
    let (x_off, e_off) = (n_steps, n_steps + n * n_steps);
    let (lo_off, hi_off) = (e_off + n_steps, e_off + 2 * n_steps);
    let mut lp = LinearProgram::new(e_off + 3 * n_steps);
    let x = |k: usize, i: usize| x_off + k * n + i;
    for t in 0..n_steps {
        let (w, pv) = (ctx.w_committed[t], ctx.pv[t]);
        let (lo, hi) = admissible_range(pv, w, ctx.total_power_cap);
        let (lo, hi) = if lo <= hi {
            (lo, hi)
        } else {
            flagged |= t == 0;
            let u = nearest_admissible(0.0, pv, w, ctx.total_power_cap);
            (u, u)
        };
        lp.set_bounds(t, lo / 1000.0, hi / 1000.0);
        let drive = &model.d * DVector::from_column_slice(&ctx.d_forecast[t * p..(t + 1) * p]) + &model.r * w;
        let free = if t == 0 { &model.a * ctx.x_now } else { DVector::zeros(n) };
        for i in 0..n {
            let mut eq = vec![(x(t, i), 1.0), (t, -1000.0 * model.b[(i, 0)])];
            if t > 0 {
                eq.extend((0..n).filter(|&j| model.a[(i, j)] != 0.0).map(|j| (x(t - 1, j), -model.a[(i, j)])));
            }
            lp.add_eq(&eq, drive[i] + free[i]);
        }
        let xr = x(t, room);
        lp.objective[e_off + t] = 1.0;
        lp.add_ineq(&[(xr, 1.0), (e_off + t, -1.0)], ctx.setpoint);
        lp.add_ineq(&[(xr, -1.0), (e_off + t, -1.0)], -ctx.setpoint);
        for (off, sign, bound) in [(lo_off, -1.0, -ctx.comfort.0), (hi_off, 1.0, ctx.comfort.1)] {
            lp.set_bounds(off + t, 0.0, f64::INFINITY);
            lp.objective[off + t] = ctx.comfort_penalty;
            lp.add_ineq(&[(xr, sign), (off + t, -1.0)], bound);
        }
    }
    let sol = solve_lp_with(&lp, solver)?;
    if sol.status != LpStatus::Optimal {
        // Only the bounds on u can conflict, and they were made consistent above.
        return Err(Error::Numerical(format!("tracking program reported {:?}", sol.status)));
    }
    let u = nearest_admissible(1000.0 * sol.primal[0], ctx.pv[0], ctx.w_committed[0], ctx.total_power_cap);
    Ok(TrackingOutcome { u, flagged })
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::constraints::{build_flexibility_polytope, build_operating_constraints, build_placement};

    fn room_model() -> ThermalModel {
        ThermalModel::new(
            DMatrix::from_row_slice(2, 2, &[0.93, 0.05, 0.01, 0.985]),
            DMatrix::from_row_slice(2, 1, &[3e-4, 0.0]),
            DMatrix::from_row_slice(2, 1, &[3e-4, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.02, 1.5e-4, 0.005, 2e-5]),
            300.0,
            3.0,
            0,
        )
        .unwrap()
    }

    fn simulate_room(model: &ThermalModel, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, d: &[f64]) -> Vec<f64> {
        let p = model.p();
        let mut x = x0.clone();
        (0..u.len())
            .map(|t| {
                x = model.step(&x, u[t], w[t], &d[t * p..(t + 1) * p]);
                model.room(&x)
            })
            .collect()
    }

    #[test]
    fn zero_price_tracks_setpoint() {
        let m = room_model();
        let d = [5.0, 0.0];
        let x0 = m.steady_state(0.0, m.steady_grid_power(20.0, &d), &d);
        let n_steps = 60;
        let c = build_operating_constraints((19.0, 24.0), &vec![0.0; n_steps], 5000.0, 2, 0).unwrap();
        let forecast: Vec<f64> = (0..n_steps).flat_map(|_| d).collect();
        let s = compute_nominal_schedule(&m, &x0, &vec![0.0; n_steps], &forecast, &c, &Default::default(), &Default::default()).unwrap();
        assert!((s.room_temp[n_steps - 1] - 21.0).abs() < 1e-4, "{}", s.room_temp[n_steps - 1]);
        assert!(s.w_bar.iter().all(|w| *w >= 0.0 && *w <= 5000.0));
        // The reported trajectory is what the model produces from the plan.
        let sim = simulate_room(&m, &x0, &s.u_plan, &s.w_bar, &forecast);
        for (a, b) in sim.iter().zip(s.room_temp.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn cheap_comfort_rides_lower_bound_when_price_is_high() {
        let m = room_model();
        let d = [2.0, 0.0];
        let x0 = m.steady_state(0.0, m.steady_grid_power(21.0, &d), &d);
        let n_steps = 48;
        let c = build_operating_constraints((19.0, 24.0), &vec![0.0; n_steps], 5000.0, 2, 0).unwrap();
        let forecast: Vec<f64> = (0..n_steps).flat_map(|_| d).collect();
        let settings = NominalSettings { lambda: 1e-6, move_penalty: 0.0, ..Default::default() };
        let s = compute_nominal_schedule(&m, &x0, &vec![0.3; n_steps], &forecast, &c, &settings, &Default::default()).unwrap();
        let at_bound = s.room_temp.iter().filter(|t| (**t - 19.0).abs() < 1e-4).count();
        assert!(at_bound > n_steps / 2, "{:?}", s.room_temp);
        assert!(s.room_temp.iter().all(|t| *t >= 19.0 - 1e-6));
    }

    #[test]
    fn scaling_price_and_comfort_weight_together_keeps_the_plan() {
        let m = room_model();
        let d = [3.0, 0.0];
        let x0 = m.steady_state(0.0, m.steady_grid_power(21.0, &d), &d);
        let n_steps = 36;
        let pv: Vec<f64> = (0..n_steps).map(|t| if t > 12 && t < 24 { 600.0 } else { 0.0 }).collect();
        let c = build_operating_constraints((19.0, 24.0), &pv, 4000.0, 2, 0).unwrap();
        let forecast: Vec<f64> = (0..n_steps).flat_map(|_| d).collect();
        let price: Vec<f64> = (0..n_steps).map(|t| 0.05 + 0.01 * (t % 12) as f64).collect();
        let doubled: Vec<f64> = price.iter().map(|p| 2.0 * p).collect();
        let base = NominalSettings::default();
        let scaled = NominalSettings { lambda: 2.0 * base.lambda, ..base.clone() };
        let a = compute_nominal_schedule(&m, &x0, &price, &forecast, &c, &base, &Default::default()).unwrap();
        let b = compute_nominal_schedule(&m, &x0, &doubled, &forecast, &c, &scaled, &Default::default()).unwrap();
        let total = |s: &NominalSchedule| s.energy_cost + s.comfort_cost;
        assert!((total(&b) - 2.0 * total(&a)).abs() < 1e-6 * (1.0 + total(&b)));
        assert!((&a.room_temp - &b.room_temp).amax() < 1e-3);
    }

    #[test]
    fn unreachable_comfort_is_reported_and_soft_mode_recovers() {
        let m = room_model();
        let d = [-20.0, 0.0];
        let x0 = m.steady_state(0.0, 0.0, &d);
        let n_steps = 6;
        let c = build_operating_constraints((19.0, 24.0), &vec![0.0; n_steps], 500.0, 2, 0).unwrap();
        let forecast: Vec<f64> = (0..n_steps).flat_map(|_| d).collect();
        let price = vec![0.1; n_steps];
        let err = compute_nominal_schedule(&m, &x0, &price, &forecast, &c, &Default::default(), &Default::default());
        assert!(matches!(err, Err(Error::InfeasibleNominal(_))));
        let soft = NominalSettings { comfort_penalty: Some(100.0), ..Default::default() };
        let s = compute_nominal_schedule(&m, &x0, &price, &forecast, &c, &soft, &Default::default()).unwrap();
        assert!(s.planned_violation > 0.0);
        assert!(s.w_bar.iter().all(|w| (w - 500.0).abs() < 1e-3));
    }

    fn advertised(g1: f64, g2: f64, h: usize) -> FlexibilitySet {
        build_flexibility_polytope(g1, g2, h).unwrap()
    }

    #[test]
    fn null_request_is_identity() {
        let w_bar = DVector::from_fn(10, |i, _| 100.0 * i as f64);
        let placement = build_placement(10, 3, 4).unwrap();
        let req = DrRequest::constant("2024-01-01T00:15:00", 4, 0.0);
        let w = apply_dr_request(&w_bar, &req, &placement, &advertised(500.0, 100.0, 4)).unwrap();
        assert_eq!(w, w_bar);
        assert!(req.is_null());
    }

    #[test]
    fn constant_full_reduction_is_accepted() {
        let w_bar = DVector::from_element(8, 900.0);
        let placement = build_placement(8, 2, 4).unwrap();
        let req = DrRequest::constant("t", 4, 500.0);
        let w = apply_dr_request(&w_bar, &req, &placement, &advertised(500.0, 10.0, 4)).unwrap();
        assert_eq!(w.as_slice(), &[900.0, 900.0, 400.0, 400.0, 400.0, 400.0, 900.0, 900.0]);
    }

    #[test]
    fn ramp_violation_is_rejected() {
        let w_bar = DVector::from_element(4, 900.0);
        let placement = build_placement(4, 0, 4).unwrap();
        let req = DrRequest { window_start_iso: "t".into(), h: 4, profile_w: vec![0.0, -300.0, -300.0, 0.0] };
        let err = apply_dr_request(&w_bar, &req, &placement, &advertised(500.0, 200.0, 4)).unwrap_err();
        match err {
            Error::InfeasibleRequest(v) => assert!((v - 100.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn acceptance_is_the_membership_predicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let w_bar = DVector::from_element(6, 1000.0);
        let placement = build_placement(6, 1, 5).unwrap();
        let flex = advertised(400.0, 120.0, 5);
        for _ in 0..500 {
            let profile: Vec<f64> = (0..5).map(|_| rng.gen_range(-500.0..50.0)).collect();
            let req = DrRequest { window_start_iso: "t".into(), h: 5, profile_w: profile.clone() };
            let accepted = apply_dr_request(&w_bar, &req, &placement, &flex).is_ok();
            assert_eq!(accepted, flex.contains(&DVector::from_vec(profile), REQUEST_TOL));
        }
    }

    #[test]
    fn request_json_round_trip() {
        let req = DrRequest::constant("2024-01-02T16:00:00", 24, 812.5);
        let json = req.to_json();
        assert_eq!(json["h"], 24);
        assert_eq!(json["profile_w"][0], -812.5);
        assert_eq!(json["window_start_iso"], "2024-01-02T16:00:00");
        assert_eq!(DrRequest::from_json(&json).unwrap(), req);
    }

    fn context<'a>(
        m: &'a ThermalModel,
        x: &'a DVector<f64>,
        w: &'a [f64],
        d: &'a [f64],
        pv: &'a [f64],
        policy: Option<PolicyState<'a>>,
    ) -> TrackingContext<'a> {
        TrackingContext {
            model: m,
            x_now: x,
            w_committed: w,
            d_forecast: d,
            pv,
            comfort: (19.0, 24.0),
            total_power_cap: 3000.0,
            setpoint: 21.0,
            comfort_penalty: 1e3,
            policy,
        }
    }

    #[test]
    fn policy_mode_without_errors_applies_v() {
        let m = room_model();
        let x = DVector::from_element(2, 21.0);
        let mut policy = AffinePolicy::zero(4, 4, 2);
        policy.v = DVector::from_vec(vec![120.0, 80.0, 0.0, 10.0]);
        policy.p[(2, 1)] = 5.0;
        let zeros_w = DVector::zeros(4);
        let zeros_d = DVector::zeros(8);
        let w = [500.0; 4];
        let pv = [400.0; 4];
        let d = [0.0; 8];
        for step in 0..4 {
            let state = PolicyState { policy: &policy, step, w_tilde: &zeros_w, d_tilde: &zeros_d };
            let out = tracking_control_step(&context(&m, &x, &w, &d, &pv, Some(state)), TrackingMode::Policy, &Default::default())
                .unwrap();
            assert_eq!(out.u, policy.v[step]);
            assert!(!out.flagged);
        }
    }

    #[test]
    fn policy_mode_clamps_to_available_pv_and_flags() {
        let m = room_model();
        let x = DVector::from_element(2, 21.0);
        let mut policy = AffinePolicy::zero(2, 2, 2);
        policy.v[0] = 900.0;
        let zw = DVector::zeros(2);
        let zd = DVector::zeros(4);
        let state = PolicyState { policy: &policy, step: 0, w_tilde: &zw, d_tilde: &zd };
        let out = tracking_control_step(&context(&m, &x, &[500.0; 2], &[0.0; 4], &[300.0; 2], Some(state)), TrackingMode::Policy, &Default::default())
            .unwrap();
        assert_eq!(out.u, 300.0);
        assert!(out.flagged);
    }

    #[test]
    fn policy_action_ignores_current_and_future_errors() {
        let m = room_model();
        let x = DVector::from_element(2, 21.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut policy = AffinePolicy::zero(6, 6, 2);
        policy.v.fill(400.0);
        for t in 0..6 {
            for c in 0..2 * t {
                policy.p[(t, c)] = rng.gen_range(-3.0..3.0);
            }
        }
        let w_tilde = DVector::zeros(6);
        let base = DVector::from_fn(12, |_, _| rng.gen_range(-2.0..2.0));
        for step in 0..6 {
            let state = PolicyState { policy: &policy, step, w_tilde: &w_tilde, d_tilde: &base };
            let ctx = context(&m, &x, &[600.0; 6], &[0.0; 12], &[1500.0; 6], Some(state));
            let u0 = tracking_control_step(&ctx, TrackingMode::Policy, &Default::default()).unwrap().u;
            let mut probe = base.clone();
            for c in 2 * step..12 {
                probe[c] += rng.gen_range(-50.0..50.0);
            }
            let state = PolicyState { d_tilde: &probe, ..state };
            let ctx = context(&m, &x, &[600.0; 6], &[0.0; 12], &[1500.0; 6], Some(state));
            let u1 = tracking_control_step(&ctx, TrackingMode::Policy, &Default::default()).unwrap().u;
            assert_eq!(u0.to_bits(), u1.to_bits());
        }
    }

    #[test]
    fn reoptimize_heats_a_cold_room_with_pv() {
        let m = room_model();
        let d = [5.0, 0.0];
        let x = m.steady_state(0.0, m.steady_grid_power(19.5, &d), &d);
        let w = vec![m.steady_grid_power(19.5, &d); 24];
        let forecast: Vec<f64> = (0..24).flat_map(|_| d).collect();
        let pv = vec![1000.0; 24];
        let out = tracking_control_step(&context(&m, &x, &w, &forecast, &pv, None), TrackingMode::Reoptimize, &Default::default())
            .unwrap();
        assert!((out.u - 1000.0).abs() < 1e-3, "{}", out.u);
        assert!(!out.flagged);
    }

    #[test]
    fn reoptimize_holds_off_in_a_warm_room() {
        let m = room_model();
        let d = [5.0, 0.0];
        let w_hold = m.steady_grid_power(23.0, &d);
        let x = m.steady_state(0.0, w_hold, &d);
        let w = vec![w_hold; 24];
        let forecast: Vec<f64> = (0..24).flat_map(|_| d).collect();
        let out = tracking_control_step(&context(&m, &x, &w, &forecast, &[800.0; 24], None), TrackingMode::Reoptimize, &Default::default())
            .unwrap();
        assert!(out.u.abs() < 1e-3, "{}", out.u);
    }

    #[test]
    fn modes_agree_when_the_action_is_pinned() {
        // With no PV, both modes must return zero and neither is flagged.
        let m = room_model();
        let x = DVector::from_element(2, 20.0);
        let policy = AffinePolicy::zero(4, 4, 2);
        let zw = DVector::zeros(4);
        let zd = DVector::zeros(8);
        let state = PolicyState { policy: &policy, step: 0, w_tilde: &zw, d_tilde: &zd };
        let ctx = context(&m, &x, &[700.0; 4], &[0.0; 8], &[0.0; 4], Some(state));
        let a = tracking_control_step(&ctx, TrackingMode::Policy, &Default::default()).unwrap();
        let b = tracking_control_step(&ctx, TrackingMode::Reoptimize, &Default::default()).unwrap();
        assert_eq!(a.u, 0.0);
        assert!(b.u.abs() < 1e-9);
    }

    #[test]
    fn negative_committed_power_beyond_pv_is_flagged() {
        // The grid side draws −400 W but only 100 W of PV can cover it.
        let m = room_model();
        let x = DVector::from_element(2, 21.0);
        let out = tracking_control_step(
            &context(&m, &x, &[-400.0; 3], &[0.0; 6], &[100.0; 3], None),
            TrackingMode::Reoptimize,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.u, 100.0);
        assert!(out.flagged);
    }
}
