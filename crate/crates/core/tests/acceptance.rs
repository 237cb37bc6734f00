//! End-to-end acceptance checks. Runs as a plain binary so every criterion prints
//! its verdict line even when it passes.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flexassess::control::{tracking_control_step, PolicyState, TrackingContext, TrackingMode};
use flexassess::lp::{solve_lp, LpStatus, SolverOptions};
use flexassess::robust::oracle::{
    duality_gap, grid_search_gamma1, nominal_feasibility_lp, random_instance, random_policy, vertex_feasible, InstanceSpec,
};
use flexassess::robust::{
    assemble_reformulation, assess_flexibility, precompute_disturbance_policy, AssessmentOptions, FlexibilityAssessment,
    ReformulationOptions, RobustProblem,
};
use flexassess::sim::{
    pv_available, run_baseline, run_scenario, window_problem, BuildingPair, ExogenousSeries, ScenarioConfig, SimulationReport,
    WindowLog,
};
use flexassess::Result;

type Verdict = Result<(bool, String)>;

/// Closed-loop runs shared by several criteria.
struct Runs {
    building: BuildingPair,
    series: ExogenousSeries,
    scenarios: Vec<SimulationReport>,
    baseline: SimulationReport,
    fixed_p_s2: SimulationReport,
}

impl Runs {
    fn scenario(&self, index: usize) -> &SimulationReport {
        &self.scenarios[index - 1]
    }
}

fn solver() -> SolverOptions {
    SolverOptions::default()
}

fn duality_exactness() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let problem = random_instance(&mut rng, &InstanceSpec::default())?;
        let policy = random_policy(&mut rng, &problem);
        let (g1, g2) = (rng.gen_range(0.0..1000.0), rng.gen_range(0.0..300.0));
        worst = worst.max(duality_gap(&problem, &policy, g1, g2)?);
    }
    let secs = clock.elapsed().as_secs_f64();
    Ok((worst <= 1e-6 && secs < 30.0, format!("max relative gap {worst:.2e} over 50 instances in {secs:.1} s")))
}

fn reformulation_matches_oracle() -> Verdict {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut probes, mut disagreements, mut worst_gap) = (0, 0, 0.0f64);
    let cap = 1000.0;
    for _ in 0..20 {
        let problem = random_instance(&mut rng, &InstanceSpec::default())?;
        for _ in 0..3 {
            let (g1, g2) = (rng.gen_range(0.0..1500.0), rng.gen_range(0.0..400.0));
            let reform = assemble_reformulation(&problem, g1, g2, &ReformulationOptions::default())?;
            let dual = solve_lp(&reform.lp)?.status == LpStatus::Optimal;
            disagreements += usize::from(dual != vertex_feasible(&problem, g1, g2, false)?);
            probes += 1;
        }
        let opts = AssessmentOptions { gamma1_max: Some(cap), ..Default::default() };
        let a = assess_flexibility(&problem, &opts)?;
        match grid_search_gamma1(&problem, opts.gamma2, cap, 50, false)? {
            Some(g) if a.feasible => worst_gap = worst_gap.max((a.gamma1_star - g).abs()),
            None if !a.feasible => {}
            _ => disagreements += 1,
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    Ok((
        disagreements == 0 && worst_gap <= 1.0 + 1e-6 && secs < 120.0,
        format!("{probes} probes, {disagreements} disagreements, max |γ₁* − grid| {worst_gap:.3} W, {secs:.1} s"),
    ))
}

fn zero_uncertainty_collapse() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut agree, mut feasible) = (0, 0);
    for _ in 0..20 {
        let mut problem = random_instance(&mut rng, &InstanceSpec::default())?;
        problem.uncertainty.delta.iter_mut().for_each(|d| *d = 0.0);
        let reform = assemble_reformulation(&problem, 0.0, 0.0, &ReformulationOptions::default())?;
        let robust = solve_lp(&reform.lp)?.status == LpStatus::Optimal;
        let nominal = solve_lp(&nominal_feasibility_lp(&problem))?.status == LpStatus::Optimal;
        agree += usize::from(robust == nominal);
        feasible += usize::from(nominal);
    }
    Ok((agree == 20, format!("{agree}/20 verdicts agree ({feasible} feasible, {} infeasible)", 20 - feasible)))
}

/// Rebuilds a logged window under another uncertainty box and comfort band.
fn rebuild(runs: &Runs, log: &WindowLog, cfg: &ScenarioConfig) -> Result<RobustProblem> {
    let (_, delta_sol) = cfg.assessed_delta();
    let start = log.start_step;
    let pv: Vec<f64> = (start..start + log.len)
        .map(|s| pv_available(runs.series.irradiance_wm2[s] - delta_sol).min(cfg.pv_cap_w))
        .collect();
    window_problem(
        &runs.building.control,
        cfg,
        &DVector::from_column_slice(&log.x0),
        &log.w_bar,
        &pv,
        &log.d_forecast,
        cfg.assessed_delta(),
    )
}

fn gamma_of(problem: &RobustProblem, options: &AssessmentOptions) -> Result<f64> {
    let a: FlexibilityAssessment = assess_flexibility(problem, options)?;
    Ok(if a.feasible { a.gamma1_star } else { 0.0 })
}

fn monotonicity(runs: &Runs) -> Verdict {
    // Bisection resolves γ₁* to 1 W, so orderings are checked to that tolerance.
    let tol = 1.0;
    let presets: Vec<ScenarioConfig> = (1..=3).map(|i| ScenarioConfig::preset(i).expect("preset")).collect();
    let options = AssessmentOptions::default();
    let windows = &runs.scenario(1).windows;
    let mut broken = Vec::new();
    let mut sums = [0.0; 3];
    for log in windows {
        let mut g = [0.0; 3];
        for (k, cfg) in presets.iter().enumerate() {
            g[k] = gamma_of(&rebuild(runs, log, cfg)?, &options)?;
            sums[k] += g[k];
        }
        if g[1] > g[0] + tol || g[2] > g[1] + tol {
            broken.push(format!("{} {:?}", log.start_iso, g));
        }
    }
    let mut widening = 0;
    let wide = ScenarioConfig { comfort: (18.5, 24.5), ..presets[1].clone() };
    for log in windows.iter().step_by(6) {
        let narrow = gamma_of(&rebuild(runs, log, &presets[1])?, &options)?;
        let widened = gamma_of(&rebuild(runs, log, &wide)?, &options)?;
        if widened + tol < narrow {
            broken.push(format!("{} band widening {narrow:.1} -> {widened:.1}", log.start_iso));
        }
        widening += 1;
    }
    let closed_loop: Vec<String> = (1..=3).map(|i| format!("s{i} {:.0} W", runs.scenario(i).mean_gamma1())).collect();
    let n = windows.len() as f64;
    Ok((
        broken.is_empty(),
        format!(
            "same-state mean γ₁* s1 {:.0} ≥ s2 {:.0} ≥ s3 {:.0} W on all {} windows, {widening} widening checks, closed-loop means {}{}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n,
            windows.len(),
            closed_loop.join(", "),
            if broken.is_empty() { String::new() } else { format!("; broken: {}", broken.join("; ")) }
        ),
    ))
}

fn robust_comfort(runs: &Runs) -> Verdict {
    let v: Vec<f64> = (1..=5).map(|i| runs.scenario(i).comfort_violation_degree_hours).collect();
    let pass = v[..3].iter().all(|x| *x < 0.005) && v[4] > 0.0;
    Ok((
        pass,
        format!(
            "violation °C·h: s1 {:.2}, s2 {:.2}, s3 {:.2}, s4 {:.3} (recorded), s5 {:.3}",
            v[0], v[1], v[2], v[3], v[4]
        ),
    ))
}

fn peak_reduction(runs: &Runs) -> Verdict {
    let mut report = runs.scenario(1).clone();
    report.compare_with_baseline(&runs.baseline);
    let cmp = report.comparison.as_ref().expect("comparison attached");
    let tol = 1e-9;
    let worse: Vec<String> = cmp
        .dr_windows
        .iter()
        .filter(|m| m.grid_energy_kwh > m.baseline_grid_energy_kwh + tol)
        .map(|m| format!("step {} {:.3} > {:.3}", m.start_step, m.grid_energy_kwh, m.baseline_grid_energy_kwh))
        .collect();
    let strict = cmp.dr_windows.iter().filter(|m| m.grid_energy_kwh < m.baseline_grid_energy_kwh - tol).count();
    let total: f64 = cmp.dr_windows.iter().map(|m| m.baseline_grid_energy_kwh - m.grid_energy_kwh).sum();
    Ok((
        !cmp.dr_windows.is_empty() && worse.is_empty() && strict > 0,
        format!(
            "{} activated windows, {strict} strictly lower, {total:.2} kWh less than baseline in total{}",
            cmp.dr_windows.len(),
            if worse.is_empty() { String::new() } else { format!("; higher on {}", worse.join(", ")) }
        ),
    ))
}

fn bundled_window(runs: &Runs, scenario: usize, window: usize) -> Result<RobustProblem> {
    let cfg = ScenarioConfig::preset(scenario)?;
    rebuild(runs, &runs.scenario(scenario).windows[window], &cfg)
}

fn bookkeeping(runs: &Runs) -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut problems = vec![bundled_window(runs, 2, 0)?];
    for _ in 0..5 {
        problems.push(random_instance(&mut rng, &InstanceSpec::default())?);
    }
    for problem in &problems {
        let c = assemble_reformulation(problem, 100.0, 25.0, &ReformulationOptions::default())?.counts;
        pass &= c.dual_vars == c.dual_increase_formula();
        details.push(format!("{}→{}", c.dual_vars, c.dual_increase_formula()));
    }
    Ok((pass, format!("added variables vs (4h−2+l_d)(l_x+l_u+l_uw): {}", details.join(", "))))
}

fn fixed_p(runs: &Runs) -> Verdict {
    let s2 = runs.scenario(2);
    let reference = bundled_window(runs, 2, 0)?;
    let fixed = precompute_disturbance_policy(&reference, &solver())?;
    let full_counts = assemble_reformulation(&reference, 100.0, 25.0, &ReformulationOptions::default())?.counts;
    let opts = ReformulationOptions { fixed_p: Some(fixed.p.clone()), ..Default::default() };
    let fixed_counts = assemble_reformulation(&reference, 100.0, 25.0, &opts)?.counts;
    let (n_steps, pn) = (full_counts.horizon, fixed.p.ncols());
    let rows = full_counts.l_x + full_counts.l_u + full_counts.l_uw;
    let var_drop = full_counts.total_vars() - fixed_counts.total_vars();
    let expected_var_drop = n_steps * pn + rows * full_counts.l_d;
    let row_drop = full_counts.total_rows() as i64 - fixed_counts.total_rows() as i64;
    let expected_row_drop = (rows * pn + full_counts.structure_rows - fixed_counts.structure_rows) as i64;
    let mut pass = var_drop == expected_var_drop && row_drop == expected_row_drop && row_drop > 0;

    let full_opts = AssessmentOptions::default();
    let fixed_opts = AssessmentOptions { fixed_p: Some(fixed), ..Default::default() };
    let cfg = ScenarioConfig::preset(2)?;
    let mut above = Vec::new();
    for log in &s2.windows {
        let problem = rebuild(runs, log, &cfg)?;
        let (g_full, g_fixed) = (gamma_of(&problem, &full_opts)?, gamma_of(&problem, &fixed_opts)?);
        if g_fixed > g_full + 1.0 {
            above.push(format!("{} {g_fixed:.1} > {g_full:.1}", log.start_iso));
        }
    }
    let violation = runs.fixed_p_s2.comfort_violation_degree_hours;
    pass &= above.is_empty() && violation < 0.005;
    Ok((
        pass,
        format!(
            "variables −{var_drop} (P {} + 𝒟̃ duals {}), rows −{row_drop}; γ₁*_fixed ≤ γ₁*_full on {}/{} windows; fixed-P s2 run {violation:.2} °C·h, mean γ₁* {:.0} W vs {:.0} W",
            n_steps * pn,
            rows * full_counts.l_d,
            s2.windows.len() - above.len(),
            s2.windows.len(),
            runs.fixed_p_s2.mean_gamma1(),
            s2.mean_gamma1(),
        ),
    ))
}

fn performance(runs: &Runs) -> Verdict {
    let problem = bundled_window(runs, 2, 3)?;
    let (h, p, n) = (problem.h(), problem.channels(), runs.building.control.n());
    let clock = Instant::now();
    assess_flexibility(&problem, &AssessmentOptions::default())?;
    let secs = clock.elapsed().as_secs_f64();
    let slowest = runs.scenarios.iter().chain([&runs.baseline, &runs.fixed_p_s2]).map(|r| r.wall_seconds).fold(0.0, f64::max);
    Ok((
        secs < 10.0 && slowest < 600.0 && (problem.horizon(), h, p, n) == (24, 24, 2, 2),
        format!("one N = h = 24 assessment {secs:.2} s; slowest 72 h run {slowest:.0} s"),
    ))
}

fn nonanticipativity(runs: &Runs) -> Verdict {
    let problem = bundled_window(runs, 2, 3)?;
    let a = assess_flexibility(&problem, &AssessmentOptions::default())?;
    let model = &runs.building.control;
    let (n_steps, p) = (problem.horizon(), problem.channels());
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let w_tilde = DVector::from_element(problem.h(), -a.gamma1_star);
    let w_committed = vec![1000.0; n_steps];
    let pv = vec![1500.0; n_steps];
    let x0 = problem.x0.clone();
    let d_hat = problem.d_hat.as_slice().to_vec();
    let mut changed = 0;
    for _ in 0..10 {
        let step = rng.gen_range(0..n_steps);
        let bound = [2.0, 50.0];
        let d_tilde = DVector::from_fn(p * n_steps, |i, _| rng.gen_range(-bound[i % p]..=bound[i % p]));
        let mut perturbed = d_tilde.clone();
        let entry = rng.gen_range(step * p..p * n_steps);
        perturbed[entry] += if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * bound[entry % p];
        let action = |d: &DVector<f64>| {
            let ctx = TrackingContext {
                model,
                x_now: &x0,
                w_committed: &w_committed[step..],
                d_forecast: &d_hat[p * step..],
                pv: &pv[step..],
                comfort: (19.0, 24.0),
                total_power_cap: 3000.0,
                setpoint: 21.0,
                comfort_penalty: 1e3,
                policy: Some(PolicyState { policy: &a.policy, step, w_tilde: &w_tilde, d_tilde: d }),
            };
            tracking_control_step(&ctx, TrackingMode::Policy, &solver()).map(|o| o.u)
        };
        changed += usize::from(action(&d_tilde)?.to_bits() != action(&perturbed)?.to_bits());
    }
    Ok((changed == 0, format!("{changed}/10 probes changed the policy-mode action")))
}

fn closed_loop() -> Result<Runs> {
    let building = BuildingPair::bundled()?;
    let series = ExogenousSeries::bundled();
    let solver = solver();
    let mut scenarios = Vec::new();
    for cfg in ScenarioConfig::all_presets() {
        let report = run_scenario(&cfg, &series, &building, &solver)?;
        eprintln!("  ran {} in {:.0} s", cfg.name, report.wall_seconds);
        scenarios.push(report);
    }
    let s1 = ScenarioConfig::preset(1)?;
    let baseline = run_baseline(&s1, &series, &building, &solver)?;
    let fixed_cfg = ScenarioConfig { fixed_p: true, ..ScenarioConfig::preset(2)? };
    let fixed_p_s2 = run_scenario(&fixed_cfg, &series, &building, &solver)?;
    eprintln!("  ran baseline and fixed-P s2");
    Ok(Runs { building, series, scenarios, baseline, fixed_p_s2 })
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, verdict: Verdict| {
        let line = match verdict {
            Ok((true, detail)) => format!("PASS  {id:>2} {name}: {detail}"),
            Ok((false, detail)) => {
                failed += 1;
                format!("FAIL  {id:>2} {name}: {detail}")
            }
            Err(e) => {
                failed += 1;
                format!("FAIL  {id:>2} {name}: error {e}")
            }
        };
        println!("{line}");
    };
    report(1, "duality exactness", duality_exactness());
    report(2, "reformulation vs vertex oracle", reformulation_matches_oracle());
    report(3, "zero-uncertainty collapse", zero_uncertainty_collapse());
    match closed_loop() {
        Ok(runs) => {
            report(4, "monotonicity", monotonicity(&runs));
            report(5, "robust comfort", robust_comfort(&runs));
            report(6, "peak-hour reduction vs baseline", peak_reduction(&runs));
            report(7, "decision-variable bookkeeping", bookkeeping(&runs));
            report(8, "fixed-P mode", fixed_p(&runs));
            report(9, "desk-scale performance", performance(&runs));
            report(10, "nonanticipativity", nonanticipativity(&runs));
        }
        Err(e) => {
            let reason = format!("closed-loop runs failed: {e}");
            for (id, name) in [
                (4, "monotonicity"),
                (5, "robust comfort"),
                (6, "peak-hour reduction vs baseline"),
                (7, "decision-variable bookkeeping"),
                (8, "fixed-P mode"),
                (9, "desk-scale performance"),
                (10, "nonanticipativity"),
            ] {
                report(id, name, Ok((false, reason.clone())));
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
