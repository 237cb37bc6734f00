use std::path::Path;
use std::process::{Command, Output};

fn flexassess(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexassess"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FLEXASSESS_SOLVER_TOL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_passes_and_a_flipped_sign_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let ok = flexassess(&["--mode", "verify", "--instances", "4", "--seed", "11"], dir.path());
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("all 4 instances pass"));

    let bad = flexassess(&["--mode", "verify", "--instances", "12", "--seed", "11", "--inject-fault"], dir.path());
    assert_eq!(bad.status.code(), Some(4), "{}", stdout(&bad));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn identify_writes_a_model_that_assess_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let model_arg = model.to_str().unwrap();
    let id = flexassess(&["--mode", "identify", "--generate", "--model", model_arg], dir.path());
    assert!(id.status.success(), "{}", stderr(&id));
    assert!(model.exists());
    assert!(stdout(&id).contains("RMSE"));

    let a = flexassess(&["--mode", "assess", "--scenario", "2", "--model", model_arg, "--start-step", "72"], dir.path());
    assert!(a.status.success(), "{}", stderr(&a));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("assessment_s2.json")).unwrap()).unwrap();
    let g1 = json["gamma1_star_w"].as_f64().unwrap();
    assert!(g1 >= 0.0 && g1 <= 3000.0);
    assert_eq!(json["window_start_step"], 72);
    assert_eq!(json["counts"]["h"], 24);
}

#[test]
fn short_custom_simulation_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{ "mode": "simulate", "scenario": "custom",
             "scenario_config": { "delta_amb": 2.0, "delta_sol": 50.0, "sim_steps": 48 } }"#,
    )
    .unwrap();
    let o = flexassess(&["--config", config.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("custom: comfort violation"));
    assert!(stdout(&o).contains("vs baseline"));
    let names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.iter().any(|n| n.contains("custom") && n.ends_with(".json")), "{names:?}");
    assert!(names.iter().any(|n| n.contains("custom") && n.ends_with(".csv")), "{names:?}");
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = flexassess(&["--mode", "simulate", "--weather", "/nonexistent.csv", "--price", "/nonexistent.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("does not exist"));

    let unknown = flexassess(&["--mode", "assess", "--scenario", "9"], dir.path());
    assert_eq!(unknown.status.code(), Some(2));

    let custom = flexassess(&["--mode", "assess", "--scenario", "custom", "--delta-amb", "1"], dir.path());
    assert_eq!(custom.status.code(), Some(2));
    assert!(stderr(&custom).contains("--delta-sol"));

    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{ "mode": "verify", "horizon": 3 }"#).unwrap();
    let bad_key = flexassess(&["--config", config.to_str().unwrap()], dir.path());
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(stderr(&bad_key).contains("horizon"));

    let tol = flexassess(&["--mode", "verify", "--solver-tol", "-1"], dir.path());
    assert_eq!(tol.status.code(), Some(2));
}

#[test]
fn identify_without_data_source_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = flexassess(&["--mode", "identify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--generate"));
}
