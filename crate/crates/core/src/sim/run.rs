use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::report::{SimulationReport, StepLog, WindowLog};
use super::{grid_operator_agent, holding_power, pv_available, realize_disturbance, stacked, BuildingPair, ExogenousSeries, PriceTrigger, ScenarioConfig};
use crate::constraints::{build_flexibility_polytope, build_operating_constraints, build_placement, DisturbanceUncertainty};
use crate::control::{
    apply_dr_request, compute_nominal_schedule, tracking_control_step, NominalSchedule, NominalSettings, PolicyState,
    TrackingContext, TrackingMode,
};
use crate::error::{Error, Result};
use crate::lp::SolverOptions;
use crate::robust::{assess_flexibility, precompute_disturbance_policy, AffinePolicy, AssessmentOptions, FixedDisturbancePolicy, RobustProblem};
use crate::thermal::{lift_dynamics, StateEstimator};

/// Proposed scheme: schedule, assess and serve DR every window, track every step.
pub fn run_scenario(config: &ScenarioConfig, series: &ExogenousSeries, building: &BuildingPair, solver: &SolverOptions) -> Result<SimulationReport> {
    Loop::new(config, series, building, solver, true)?.run()
}

/// Price-responsive scheduling only: no assessment and no DR.
pub fn run_baseline(config: &ScenarioConfig, series: &ExogenousSeries, building: &BuildingPair, solver: &SolverOptions) -> Result<SimulationReport> {
    Loop::new(config, series, building, solver, false)?.run()
}

/// Decisions in force during the current window.
struct Window {
    start: usize,
    len: usize,
    plan: NominalSchedule,
    committed: Vec<f64>,
    request: DVector<f64>,
    policy: Option<AffinePolicy>,
    gamma1: f64,
}

struct Loop<'a> {
    config: &'a ScenarioConfig,
    series: &'a ExogenousSeries,
    building: &'a BuildingPair,
    solver: &'a SolverOptions,
    with_dr: bool,
    steps: usize,
    d_truth: Vec<f64>,
    pv_forecast: Vec<f64>,
    pv_truth: Vec<f64>,
    fixed_p: Option<FixedDisturbancePolicy>,
}

impl<'a> Loop<'a> {
    fn new(config: &'a ScenarioConfig, series: &'a ExogenousSeries, building: &'a BuildingPair, solver: &'a SolverOptions, with_dr: bool) -> Result<Self> {
        config.validate()?;
        let steps = config.sim_steps;
        if series.len() < steps {
            return Err(Error::Coverage(format!("series has {} samples, the run needs {steps}", series.len())));
        }
        for (what, period) in [("truth model", building.truth.model.sample_period_s), ("control model", building.control.sample_period_s)] {
            if (period - config.sample_period_s).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("{what} samples at {period} s, the run at {} s", config.sample_period_s)));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d_truth = realize_disturbance(&series.disturbances(0, steps), config, &mut rng);
        let pv_forecast = (0..steps).map(|t| pv_cap(config, series.irradiance_wm2[t])).collect();
        let pv_truth = (0..steps).map(|t| pv_cap(config, d_truth[2 * t + 1])).collect();
        Ok(Self { config, series, building, solver, with_dr, steps, d_truth, pv_forecast, pv_truth, fixed_p: None })
    }

    fn run(mut self) -> Result<SimulationReport> {
        let started = Instant::now();
        let cfg = self.config;
        let (truth, model) = (&self.building.truth, &self.building.control);
        let name = if self.with_dr { cfg.name.clone() } else { format!("{}-baseline", cfg.name) };
        let mut report = SimulationReport::new(&name, !self.with_dr, cfg.sample_period_s, cfg.price_threshold, cfg.comfort);
        // Separate stream from the realization so noise does not shift with the policy.
        let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

        let d0 = &self.d_truth[0..2];
        let w0 = holding_power(&truth.model, cfg.setpoint, d0).clamp(0.0, cfg.total_power_cap_w);
        let mut x = truth.steady_state(0.0, w0, d0);
        let mut estimator = StateEstimator::new(model, truth.model.room(&x), 0.0, w0, d0);
        let mut d_error = Vec::new();
        let mut window: Option<Window> = None;

        for t in 0..self.steps {
            if t % cfg.flex_horizon_steps == 0 {
                let (win, log) = self.open_window(t, &estimator.x)?;
                report.windows.push(log);
                window = Some(win);
                d_error.clear();
            }
            let win = window.as_ref().expect("a window is open");
            let k = t - win.start;
            let w = win.committed[k];

            let horizon = cfg.flex_horizon_steps.min(self.steps - t);
            let w_ahead: Vec<f64> = (t..t + horizon)
                .map(|s| if s < win.start + win.len { win.committed[s - win.start] } else { win.plan.w_bar[(s - win.start).min(win.plan.horizon() - 1)] })
                .collect();
            let mut pv_ahead = vec![self.pv_truth[t]];
            pv_ahead.extend_from_slice(&self.pv_forecast[t + 1..t + horizon]);
            let d_ahead = self.series.disturbances(t, t + horizon);
            let d_tilde = {
                let mut e = DVector::zeros(2 * win.len);
                e.as_mut_slice()[..d_error.len()].copy_from_slice(&d_error);
                e
            };
            let policy_state = win.policy.as_ref().map(|policy| PolicyState { policy, step: k, w_tilde: &win.request, d_tilde: &d_tilde });
            let mode = if policy_state.is_some() { cfg.tracking } else { TrackingMode::Reoptimize };
            let ctx = TrackingContext {
                model,
                x_now: &estimator.x,
                w_committed: &w_ahead,
                d_forecast: &d_ahead,
                pv: &pv_ahead,
                comfort: cfg.comfort,
                total_power_cap: cfg.total_power_cap_w,
                setpoint: cfg.setpoint,
                comfort_penalty: cfg.tracking_penalty,
                policy: policy_state,
            };
            let outcome = tracking_control_step(&ctx, mode, self.solver)?;
            let u = outcome.u;
            // The heat pump cannot run backwards: a grid export larger than the PV
            // feeding it is not physically available.
            let (w_applied, clipped) = if u + w < 0.0 { (-u, true) } else { (w, false) };

            let d_now = &self.d_truth[2 * t..2 * t + 2];
            report.steps.push(StepLog {
                t_iso: self.series.iso(t),
                x_truth: x.as_slice().to_vec(),
                x_model: estimator.x.as_slice().to_vec(),
                u_w: u,
                w_w: w_applied,
                w_bar_w: win.plan.w_bar[k],
                pv_available_w: self.pv_truth[t],
                dr_active: win.request.iter().any(|r| *r != 0.0),
                price: self.series.price_per_kwh[t],
                gamma1_w: win.gamma1,
                flagged: outcome.flagged || clipped,
            });
            x = truth.step(&x, u, w_applied, d_now, &mut noise);
            estimator.update(model, u, w_applied, d_now, truth.model.room(&x));
            let forecast = self.series.disturbance(t);
            d_error.extend([d_now[0] - forecast[0], d_now[1] - forecast[1]]);
        }
        report.finalize();
        report.wall_seconds = started.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Nominal plan, assessment and DR request for the window starting at `t`.
    fn open_window(&mut self, t: usize, x0: &DVector<f64>) -> Result<(Window, WindowLog)> {
        let cfg = self.config;
        let model = &self.building.control;
        let len = cfg.flex_horizon_steps.min(self.steps - t);
        let WindowPlan { schedule: plan, pv_bound, softened: nominal_softened } =
            plan_window(model, cfg, self.series, t, self.steps, x0, self.solver)?;
        let (delta_amb, delta_sol) = cfg.assessed_delta();
        let w_bar_window: Vec<f64> = plan.w_bar.as_slice()[..len].to_vec();
        let d_window = self.series.disturbances(t, t + len);
        let price_signal = match cfg.price_trigger {
            PriceTrigger::WindowAverage => self.series.price_per_kwh[t..t + len].iter().sum::<f64>() / len as f64,
            PriceTrigger::Instantaneous => self.series.price_per_kwh[t],
        };
        let mut log = WindowLog {
            start_step: t,
            start_iso: self.series.iso(t),
            len,
            price_signal,
            gamma1_star_w: 0.0,
            gamma2_star_w: 0.0,
            assessment_feasible: false,
            lp_solves: 0,
            nominal_softened,
            request: None,
            x0: x0.as_slice().to_vec(),
            w_bar: w_bar_window.clone(),
            pv_bound: pv_bound.clone(),
            d_forecast: d_window.clone(),
            assess_seconds: 0.0,
            error: None,
        };
        let mut window = Window {
            start: t,
            len,
            committed: w_bar_window.clone(),
            plan,
            request: DVector::zeros(len),
            policy: None,
            gamma1: 0.0,
        };
        if !self.with_dr {
            return Ok((window, log));
        }

        let problem = window_problem(model, cfg, x0, &w_bar_window, &pv_bound, &d_window, (delta_amb, delta_sol))?;
        if cfg.fixed_p && self.fixed_p.is_none() {
            // Computed once on the first window and reused for the rest of the run.
            self.fixed_p = Some(precompute_disturbance_policy(&problem, self.solver)?);
        }
        let options = AssessmentOptions {
            gamma2: cfg.gamma2,
            causal_k: cfg.causal_k,
            fixed_p: self.fixed_p.clone(),
            solver: self.solver.clone(),
            ..Default::default()
        };
        let clock = Instant::now();
        let assessment = match assess_flexibility(&problem, &options) {
            Ok(a) => Some(a),
            Err(e) if e.is_solver_failure() => {
                log.error = Some(e.to_string());
                None
            }
            Err(e) => return Err(e),
        };
        log.assess_seconds = clock.elapsed().as_secs_f64();
        let Some(assessment) = assessment else {
            return Ok((window, log));
        };
        log.gamma1_star_w = assessment.gamma1_star;
        log.gamma2_star_w = assessment.gamma2_star;
        log.assessment_feasible = assessment.feasible;
        log.lp_solves = assessment.lp_solves;
        window.gamma1 = assessment.gamma1_star;

        let request = grid_operator_agent(price_signal, cfg.price_threshold, assessment.gamma1_star, len, &log.start_iso);
        if let Some(request) = &request {
            let placement = build_placement(len, 0, len)?;
            let advertised = build_flexibility_polytope(assessment.gamma1_star, assessment.gamma2_star, len)?;
            match apply_dr_request(&stacked(&w_bar_window), request, &placement, &advertised) {
                Ok(w) => {
                    window.committed = w.as_slice().to_vec();
                    window.request = stacked(&request.profile_w);
                }
                Err(e) => log.error = Some(e.to_string()),
            }
        }
        if assessment.feasible {
            window.policy = Some(assessment.policy);
        }
        log.request = request;
        Ok((window, log))
    }
}

fn pv_cap(config: &ScenarioConfig, irradiance: f64) -> f64 {
    pv_available(irradiance).min(config.pv_cap_w)
}

/// Nominal schedule opened at step `t` of a run that ends at `end`.
#[derive(Debug, Clone)]
pub struct WindowPlan {
    pub schedule: NominalSchedule,
    /// PV upper bound the assessment uses over the window, W.
    pub pv_bound: Vec<f64>,
    /// The hard-comfort plan was infeasible and comfort was softened.
    pub softened: bool,
}

/// Economic plan for the window starting at `t`, robust over its first
/// `flex_horizon_steps` steps to the assessed forecast-error box.
pub fn plan_window(
    model: &crate::thermal::ThermalModel,
    cfg: &ScenarioConfig,
    series: &ExogenousSeries,
    t: usize,
    end: usize,
    x0: &DVector<f64>,
    solver: &SolverOptions,
) -> Result<WindowPlan> {
    let end = end.min(series.len());
    if t >= end {
        return Err(Error::Coverage(format!("window at step {t} starts after the last step {end}")));
    }
    let len = cfg.flex_horizon_steps.min(end - t);
    let hn = cfg.nominal_horizon_steps.min(end - t);
    let d_nominal = series.disturbances(t, t + hn);
    let (delta_amb, delta_sol) = cfg.assessed_delta();
    // A smaller irradiance also means less PV, so the committed window only counts
    // on the PV left at the low end of the irradiance interval.
    let pv_bound: Vec<f64> = (t..t + len).map(|s| pv_cap(cfg, series.irradiance_wm2[s] - delta_sol)).collect();
    let mut pv_plan = pv_bound.clone();
    pv_plan.extend((t + len..t + hn).map(|s| pv_cap(cfg, series.irradiance_wm2[s])));
    let constraints = build_operating_constraints(cfg.planning_band(), &pv_plan, cfg.total_power_cap_w, model.n(), model.room_index)?;
    // The committed part of the plan also keeps a comfort margin for the forecast
    // errors the assessment accounts for.
    let settings = NominalSettings {
        setpoint: cfg.setpoint,
        lambda: cfg.lambda,
        comfort_penalty: None,
        move_penalty: cfg.move_penalty,
        disturbance_bound: vec![delta_amb, delta_sol],
        margin_steps: len,
    };
    let price = &series.price_per_kwh[t..t + hn];
    match compute_nominal_schedule(model, x0, price, &d_nominal, &constraints, &settings, solver) {
        Ok(schedule) => Ok(WindowPlan { schedule, pv_bound, softened: false }),
        Err(Error::InfeasibleNominal(_)) => {
            let soft = NominalSettings { comfort_penalty: Some(cfg.nominal_soft_penalty), ..settings };
            let schedule = compute_nominal_schedule(model, x0, price, &d_nominal, &constraints, &soft, solver)?;
            Ok(WindowPlan { schedule, pv_bound, softened: true })
        }
        Err(e) => Err(e),
    }
}

/// Assessment program of one window, from the values recorded in its log.
pub fn window_problem(
    model: &crate::thermal::ThermalModel,
    cfg: &ScenarioConfig,
    x0: &DVector<f64>,
    w_bar: &[f64],
    pv_bound: &[f64],
    d_forecast: &[f64],
    delta: (f64, f64),
) -> Result<RobustProblem> {
    let len = w_bar.len();
    let lifted = lift_dynamics(model, len)?;
    let constraints = build_operating_constraints(cfg.planning_band(), pv_bound, cfg.total_power_cap_w, model.n(), model.room_index)?;
    let uncertainty = DisturbanceUncertainty::new(vec![delta.0, delta.1], len)?;
    let placement = build_placement(len, 0, len)?;
    RobustProblem::new(lifted, constraints, uncertainty, placement, x0.clone(), stacked(w_bar), stacked(d_forecast))
}
