use flexassess::lp::SolverOptions;
use flexassess::sim::{run_baseline, run_scenario, BuildingPair, ExogenousSeries, ScenarioConfig};

fn short(index: usize, steps: usize) -> ScenarioConfig {
    ScenarioConfig { sim_steps: steps, ..ScenarioConfig::preset(index).unwrap() }
}

#[test]
fn flat_price_never_triggers_and_matches_the_baseline() {
    let building = BuildingPair::bundled().unwrap();
    let mut series = ExogenousSeries::bundled();
    series.price_per_kwh.iter_mut().for_each(|p| *p = 0.1);
    let cfg = short(2, 48);
    let solver = SolverOptions::default();
    let proposed = run_scenario(&cfg, &series, &building, &solver).unwrap();
    let baseline = run_baseline(&cfg, &series, &building, &solver).unwrap();
    assert!(proposed.windows.iter().all(|w| w.request.is_none()));
    assert!(proposed.windows.iter().all(|w| w.gamma1_star_w >= 0.0));
    let w = |r: &flexassess::sim::SimulationReport| r.steps.iter().map(|s| s.w_w).collect::<Vec<_>>();
    assert_eq!(w(&proposed), w(&baseline));
    assert_eq!(proposed.delivered_dr_energy_kwh, 0.0);
}

#[test]
fn served_request_respects_the_energy_accounting() {
    let building = BuildingPair::bundled().unwrap();
    let series = ExogenousSeries::bundled();
    // The fourth window opens at 06:00, inside the morning peak.
    let cfg = ScenarioConfig { sim_steps: 96, ..ScenarioConfig::preset(1).unwrap() };
    let solver = SolverOptions::default();
    let proposed = run_scenario(&cfg, &series, &building, &solver).unwrap();
    let baseline = run_baseline(&cfg, &series, &building, &solver).unwrap();
    let mut report = proposed.clone();
    report.compare_with_baseline(&baseline);

    let served: Vec<_> = report.windows.iter().filter(|w| w.request.is_some()).collect();
    assert!(!served.is_empty(), "the morning peak should trigger a request");
    let dt_h = cfg.sample_period_s / 3600.0;
    let bound: f64 = served.iter().map(|w| w.gamma1_star_w * w.len as f64 * dt_h / 1000.0).sum();
    assert!(report.delivered_dr_energy_kwh >= 0.0);
    assert!(report.delivered_dr_energy_kwh <= bound + 1e-9, "{} > {bound}", report.delivered_dr_energy_kwh);

    let cmp = report.comparison.as_ref().unwrap();
    for m in &cmp.dr_windows {
        assert!(m.grid_energy_kwh <= m.baseline_grid_energy_kwh + 1e-9, "{m:?}");
    }
    assert_eq!(baseline.comfort_violation_degree_hours, 0.0);
    assert!(baseline.windows.iter().all(|w| w.request.is_none()));
    assert_eq!(report.steps.len(), 96);
    assert_eq!(report.windows.len(), 4);
}

#[test]
fn reports_round_trip_through_files() {
    let building = BuildingPair::bundled().unwrap();
    let series = ExogenousSeries::bundled();
    let report = run_baseline(&short(1, 24), &series, &building, &SolverOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path(), "_s1").unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report_s1.json")).unwrap()).unwrap();
    assert_eq!(json["scenario"], "s1-baseline");
    assert_eq!(json["baseline"], true);
    let trace = std::fs::read_to_string(dir.path().join("trace_s1.csv")).unwrap();
    assert_eq!(trace.lines().count(), 25);
}

#[test]
fn run_rejects_a_series_that_is_too_short() {
    let building = BuildingPair::bundled().unwrap();
    let series = ExogenousSeries::bundled();
    let cfg = short(1, series.len() + 1);
    assert!(run_scenario(&cfg, &series, &building, &SolverOptions::default()).is_err());
}
