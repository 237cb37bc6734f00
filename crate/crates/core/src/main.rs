use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Deserialize;

use flexassess::lp::SolverOptions;
use flexassess::robust::oracle::verification_suite;
use flexassess::robust::{assess_flexibility, AssessmentOptions, FaultInjection, Gamma2Policy};
use flexassess::sim::{
    load_series, plan_window, run_baseline, run_scenario, training_data, window_problem, BuildingPair, ExogenousSeries,
    ScenarioConfig, SimulationReport,
};
use flexassess::thermal::{identify_model, one_step_rmse, IdentificationSample, ThermalModel, TruthModel};
use flexassess::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Assess,
    Simulate,
    Baseline,
    Identify,
    Verify,
}

/// Robust demand-response flexibility assessment for buildings.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[arg(long, value_enum, default_value = "simulate")]
    mode: Mode,
    /// Scenario 1-5, `all`, or `custom` (needs --delta-amb and --delta-sol).
    #[arg(long, default_value = "1")]
    scenario: String,
    /// Weather CSV (`timestamp_iso,ambient_c,ghi_wm2`); the bundled dataset when absent.
    #[arg(long)]
    weather: Option<PathBuf>,
    /// Price CSV (`timestamp_iso,price_per_kwh`).
    #[arg(long)]
    price: Option<PathBuf>,
    /// Control-model JSON. Read by assess/simulate, written by identify.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Fixed γ₂ in W/step instead of the default ratio policy.
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    fixed_p: bool,
    #[arg(long)]
    causal_k: bool,
    /// Nominal horizon in steps.
    #[arg(long)]
    horizon_nominal: Option<usize>,
    /// Flexibility horizon in steps.
    #[arg(long)]
    horizon_flex: Option<usize>,
    #[arg(long)]
    delta_amb: Option<f64>,
    #[arg(long)]
    delta_sol: Option<f64>,
    /// JSON file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Window start step for `assess`.
    #[arg(long, default_value_t = 0)]
    start_step: usize,
    /// Model order for `identify`.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Training CSV for `identify` (`room_c,u_w,w_w,ambient_c,ghi_wm2`).
    #[arg(long)]
    training: Option<PathBuf>,
    /// Generate ten days of training data from the bundled plant.
    #[arg(long)]
    generate: bool,
    /// Random instances for `verify`.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Flip the sign of one dual equality in `verify` to check that it is caught.
    #[arg(long)]
    inject_fault: bool,
    #[arg(long, env = "FLEXASSESS_SOLVER_TOL")]
    solver_tol: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    mode: Option<Mode>,
    scenario: Option<String>,
    weather: Option<PathBuf>,
    price: Option<PathBuf>,
    model: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    gamma2: Option<f64>,
    fixed_p: Option<bool>,
    causal_k: Option<bool>,
    horizon_nominal: Option<usize>,
    horizon_flex: Option<usize>,
    delta_amb: Option<f64>,
    delta_sol: Option<f64>,
    start_step: Option<usize>,
    order: Option<usize>,
    training: Option<PathBuf>,
    generate: Option<bool>,
    instances: Option<usize>,
    solver_tol: Option<f64>,
    /// Full scenario settings for `custom`.
    scenario_config: Option<ScenarioConfig>,
}

enum Failure {
    Config(String),
    Solver(String),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_solver_failure() {
            Failure::Solver(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

/// Flags with the config file applied on top.
struct Settings {
    cli: Cli,
    scenario_config: Option<ScenarioConfig>,
}

fn merge(mut cli: Cli) -> Result<Settings, Failure> {
    let Some(path) = cli.config.clone() else {
        return Ok(Settings { cli, scenario_config: None });
    };
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let f: FileConfig = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = f.$field { cli.$field = v; } )* };
    }
    macro_rules! take_opt {
        ($($field:ident),*) => { $( if f.$field.is_some() { cli.$field = f.$field; } )* };
    }
    take!(mode, scenario, seed, out, fixed_p, causal_k, start_step, order, generate, instances);
    take_opt!(weather, price, model, gamma2, horizon_nominal, horizon_flex, delta_amb, delta_sol, training, solver_tol);
    Ok(Settings { cli, scenario_config: f.scenario_config })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = merge(cli)?;
    let cli = &settings.cli;
    for path in [&cli.weather, &cli.price, &cli.training].into_iter().flatten() {
        if !path.exists() {
            return Err(Failure::Config(format!("{} does not exist", path.display())));
        }
    }
    if cli.mode != Mode::Identify {
        if let Some(path) = &cli.model {
            if !path.exists() {
                return Err(Failure::Config(format!("{} does not exist", path.display())));
            }
        }
    }
    let solver = SolverOptions { tolerance: cli.solver_tol.unwrap_or(SolverOptions::default().tolerance), ..Default::default() };
    if !(solver.tolerance > 0.0) {
        return Err(Failure::Config("solver tolerance must be positive".into()));
    }
    match cli.mode {
        Mode::Identify => identify(cli),
        Mode::Verify => verify(cli),
        Mode::Assess => assess(cli, &settings, &solver),
        Mode::Simulate | Mode::Baseline => simulate(cli, &settings, &solver),
    }
}

fn scenarios(cli: &Cli, custom: &Option<ScenarioConfig>) -> Result<Vec<ScenarioConfig>, Failure> {
    let mut list = match cli.scenario.as_str() {
        "all" => ScenarioConfig::all_presets(),
        "custom" => {
            let mut cfg = custom.clone().unwrap_or_default();
            match (cli.delta_amb, cli.delta_sol, custom) {
                (Some(a), Some(s), _) => {
                    cfg.delta_amb = a;
                    cfg.delta_sol = s;
                }
                (None, None, Some(_)) => {}
                _ => return Err(Failure::Config("scenario `custom` needs --delta-amb and --delta-sol".into())),
            }
            cfg.name = "custom".into();
            vec![cfg]
        }
        s => {
            let index = s.parse::<usize>().map_err(|_| Failure::Config(format!("unknown scenario `{s}`")))?;
            vec![ScenarioConfig::preset(index)?]
        }
    };
    for cfg in &mut list {
        cfg.seed = cli.seed;
        cfg.fixed_p |= cli.fixed_p;
        cfg.causal_k |= cli.causal_k;
        if let Some(g2) = cli.gamma2 {
            cfg.gamma2 = Gamma2Policy::Fixed(g2);
        }
        if let Some(n) = cli.horizon_nominal {
            cfg.nominal_horizon_steps = n;
        }
        if let Some(n) = cli.horizon_flex {
            cfg.flex_horizon_steps = n;
        }
        cfg.validate()?;
    }
    Ok(list)
}

fn series(cli: &Cli) -> Result<ExogenousSeries, Failure> {
    match (&cli.weather, &cli.price) {
        (Some(w), Some(p)) => Ok(load_series(w, p)?),
        (None, None) => Ok(ExogenousSeries::bundled()),
        _ => Err(Failure::Config("--weather and --price go together".into())),
    }
}

fn building(cli: &Cli) -> Result<BuildingPair, Failure> {
    let mut pair = BuildingPair::bundled()?;
    if let Some(path) = &cli.model {
        pair.control = ThermalModel::load(path)?;
    }
    Ok(pair)
}

fn assess(cli: &Cli, settings: &Settings, solver: &SolverOptions) -> Result<(), Failure> {
    let series = series(cli)?;
    let pair = building(cli)?;
    let model = &pair.control;
    std::fs::create_dir_all(&cli.out)?;
    for cfg in scenarios(cli, &settings.scenario_config)? {
        let t = cli.start_step;
        let len = cfg.flex_horizon_steps;
        if t + len > series.len() {
            return Err(Failure::Config(format!("window at step {t} with {len} steps runs past the {} samples", series.len())));
        }
        // Start from the plant held at the setpoint under the first forecast.
        let d0 = series.disturbance(t);
        let w0 = flexassess::sim::holding_power(&pair.truth.model, cfg.setpoint, &d0).clamp(0.0, cfg.total_power_cap_w);
        let room = pair.truth.model.room(&pair.truth.steady_state(0.0, w0, &d0));
        let x0 = flexassess::thermal::StateEstimator::new(model, room, 0.0, w0, &d0).x;
        let window = plan_window(model, &cfg, &series, t, series.len(), &x0, solver)?;
        let w_bar = &window.schedule.w_bar.as_slice()[..len];
        let problem = window_problem(model, &cfg, &x0, w_bar, &window.pv_bound, &series.disturbances(t, t + len), cfg.assessed_delta())?;
        let fixed_p = if cfg.fixed_p { Some(flexassess::robust::precompute_disturbance_policy(&problem, solver)?) } else { None };
        let options = AssessmentOptions { gamma2: cfg.gamma2, causal_k: cfg.causal_k, fixed_p, solver: *solver, ..Default::default() };
        let a = assess_flexibility(&problem, &options)?;
        if !a.feasible {
            return Err(Failure::Config(format!("{}: the nominal window is infeasible under the assessed uncertainty", cfg.name)));
        }
        println!(
            "{}: gamma1* = {:.1} W, gamma2* = {:.1} W/step, window = steps {}..{} ({}), LP solves = {}",
            cfg.name,
            a.gamma1_star,
            a.gamma2_star,
            t,
            t + len,
            series.iso(t),
            a.lp_solves
        );
        let mut json = a.to_json(t);
        json["scenario"] = cfg.name.clone().into();
        json["counts"] = serde_json::to_value(a.counts)?;
        let path = cli.out.join(format!("assessment_{}.json", cfg.name));
        std::fs::write(&path, serde_json::to_string_pretty(&json)? + "\n")?;
    }
    Ok(())
}

fn simulate(cli: &Cli, settings: &Settings, solver: &SolverOptions) -> Result<(), Failure> {
    let series = series(cli)?;
    let pair = building(cli)?;
    let configs = scenarios(cli, &settings.scenario_config)?;
    let baseline_only = cli.mode == Mode::Baseline;
    let results: Vec<Result<(ScenarioConfig, SimulationReport), Error>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| {
                let (series, pair) = (&series, &pair);
                scope.spawn(move || {
                    let baseline = run_baseline(cfg, series, pair, solver)?;
                    if baseline_only {
                        return Ok((cfg.clone(), baseline));
                    }
                    let mut report = run_scenario(cfg, series, pair, solver)?;
                    report.compare_with_baseline(&baseline);
                    Ok((cfg.clone(), report))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    for result in results {
        let (cfg, report) = result?;
        let suffix = if baseline_only { format!("_{}_baseline", cfg.name) } else { format!("_{}", cfg.name) };
        report.write(&cli.out, &suffix)?;
        print_summary(&report);
    }
    Ok(())
}

fn print_summary(r: &SimulationReport) {
    println!(
        "{}: comfort violation {:.3} K·h (room {:.2}..{:.2} °C), peak-hour grid energy {:.2} kWh, delivered DR {:.2} kWh, mean gamma1* {:.0} W",
        r.scenario,
        r.comfort_violation_degree_hours,
        r.min_room_truth_c,
        r.max_room_truth_c,
        r.peak_grid_energy_kwh,
        r.delivered_dr_energy_kwh,
        r.mean_gamma1()
    );
    if let Some(c) = &r.comparison {
        println!("  vs baseline: peak-hour energy {:+.2} kWh, cost {:+.3} $", c.peak_grid_energy_delta_kwh, c.energy_cost_delta);
    }
}

fn read_training(path: &Path) -> Result<Vec<IdentificationSample>, Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<f64, Failure> {
            record
                .get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Failure::Config(format!("{}:{line}: expected 5 numeric fields", path.display())))
        };
        out.push(IdentificationSample { room_c: field(0)?, u_w: field(1)?, w_w: field(2)?, d: vec![field(3)?, field(4)?] });
    }
    Ok(out)
}

fn identify(cli: &Cli) -> Result<(), Failure> {
    let truth = TruthModel::bundled(flexassess::sim::SAMPLE_PERIOD_S as f64)?;
    let (train, held_out) = match (&cli.training, cli.generate) {
        (Some(path), _) => {
            let mut all = read_training(path)?;
            let split = all.len() * 4 / 5;
            let held = all.split_off(split);
            (all, held)
        }
        (None, true) => training_data(&truth, 10, cli.seed),
        (None, false) => return Err(Failure::Config("identify needs --training FILE or --generate".into())),
    };
    let model = identify_model(&train, cli.order, truth.model.sample_period_s, truth.params.cop)?;
    let rmse = one_step_rmse(&model, &held_out);
    let path = cli.model.clone().unwrap_or_else(|| cli.out.join("model.json"));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    model.save(&path)?;
    println!("order {} model written to {}; held-out one-step RMSE {:.4} °C", cli.order, path.display(), rmse);
    Ok(())
}

fn verify(cli: &Cli) -> Result<(), Failure> {
    let fault = cli.inject_fault.then_some(FaultInjection::FlipFlexEqualitySign { row: 1 });
    let checks = verification_suite(cli.instances, cli.seed, fault)?;
    println!("instance  duality  oracle  monotone  max-gap");
    for c in &checks {
        let mark = |ok: bool| if ok { "pass" } else { "FAIL" };
        println!("{:>8}  {:>7}  {:>6}  {:>8}  {:.2e}", c.index, mark(c.duality_ok), mark(c.oracle_ok), mark(c.monotone_ok), c.max_duality_gap);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        return Err(Failure::Verify(format!("{failed} of {} instances disagree", checks.len())));
    }
    println!("all {} instances pass", checks.len());
    Ok(())
}
