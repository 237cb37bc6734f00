use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::DrRequest;
use crate::error::Result;

/// One 5-minute step. The room temperatures are at the start of the step; the powers
/// are applied during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub t_iso: String,
    pub x_truth: Vec<f64>,
    pub x_model: Vec<f64>,
    pub u_w: f64,
    pub w_w: f64,
    /// Nominal plan for this step before any DR request.
    pub w_bar_w: f64,
    pub pv_available_w: f64,
    pub dr_active: bool,
    pub price: f64,
    pub gamma1_w: f64,
    /// The tracking controller could not honour its preferred action.
    pub flagged: bool,
}

impl StepLog {
    pub fn room_truth(&self) -> f64 {
        self.x_truth[0]
    }
}

/// Everything decided at one 2-hour window start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    pub start_step: usize,
    pub start_iso: String,
    pub len: usize,
    pub price_signal: f64,
    pub gamma1_star_w: f64,
    pub gamma2_star_w: f64,
    pub assessment_feasible: bool,
    pub lp_solves: usize,
    /// Soft comfort bounds were needed for the nominal plan.
    pub nominal_softened: bool,
    pub request: Option<DrRequest>,
    /// Control-model state and inputs of the assessment, enough to rebuild its program.
    pub x0: Vec<f64>,
    pub w_bar: Vec<f64>,
    pub pv_bound: Vec<f64>,
    pub d_forecast: Vec<f64>,
    #[serde(skip)]
    pub assess_seconds: f64,
    pub error: Option<String>,
}

impl WindowLog {
    pub fn dr_active(&self) -> bool {
        self.request.as_ref().is_some_and(|r| !r.is_null())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetric {
    pub start_step: usize,
    pub grid_energy_kwh: f64,
    pub baseline_grid_energy_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub peak_grid_energy_delta_kwh: f64,
    pub total_grid_energy_delta_kwh: f64,
    pub energy_cost_delta: f64,
    /// Grid energy of both runs on every window where a nonzero request was delivered.
    pub dr_windows: Vec<WindowMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub baseline: bool,
    pub sample_period_s: f64,
    pub price_threshold: f64,
    pub comfort: (f64, f64),
    /// Imported grid energy on steps priced above the threshold.
    pub peak_grid_energy_kwh: f64,
    pub total_grid_energy_kwh: f64,
    pub energy_cost: f64,
    pub delivered_dr_energy_kwh: f64,
    pub comfort_violation_degree_hours: f64,
    pub min_room_truth_c: f64,
    pub max_room_truth_c: f64,
    pub flagged_steps: usize,
    pub gamma1_star_w: Vec<f64>,
    pub windows: Vec<WindowLog>,
    #[serde(skip)]
    pub steps: Vec<StepLog>,
    pub comparison: Option<BaselineComparison>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl SimulationReport {
    pub(crate) fn new(scenario: &str, baseline: bool, sample_period_s: f64, price_threshold: f64, comfort: (f64, f64)) -> Self {
        Self {
            scenario: scenario.into(),
            baseline,
            sample_period_s,
            price_threshold,
            comfort,
            peak_grid_energy_kwh: 0.0,
            total_grid_energy_kwh: 0.0,
            energy_cost: 0.0,
            delivered_dr_energy_kwh: 0.0,
            comfort_violation_degree_hours: 0.0,
            min_room_truth_c: f64::INFINITY,
            max_room_truth_c: f64::NEG_INFINITY,
            flagged_steps: 0,
            gamma1_star_w: Vec::new(),
            windows: Vec::new(),
            steps: Vec::new(),
            comparison: None,
            wall_seconds: 0.0,
        }
    }

    fn step_hours(&self) -> f64 {
        self.sample_period_s / 3600.0
    }

    /// Recomputes every metric from the step and window logs.
    pub(crate) fn finalize(&mut self) {
        let dt_h = self.step_hours();
        let (lo, hi) = self.comfort;
        let import = |s: &StepLog| s.w_w.max(0.0) * dt_h / 1000.0;
        self.peak_grid_energy_kwh = self.steps.iter().filter(|s| s.price > self.price_threshold).map(import).sum();
        self.total_grid_energy_kwh = self.steps.iter().map(import).sum();
        self.energy_cost = self.steps.iter().map(|s| s.price * import(s)).sum();
        self.delivered_dr_energy_kwh = self
            .steps
            .iter()
            .filter(|s| s.dr_active)
            .map(|s| (s.w_bar_w - s.w_w) * dt_h / 1000.0)
            .sum::<f64>()
            .max(0.0);
        self.comfort_violation_degree_hours = self
            .steps
            .iter()
            .map(|s| ((lo - s.room_truth()).max(0.0) + (s.room_truth() - hi).max(0.0)) * dt_h)
            .sum();
        self.min_room_truth_c = self.steps.iter().map(StepLog::room_truth).fold(f64::INFINITY, f64::min);
        self.max_room_truth_c = self.steps.iter().map(StepLog::room_truth).fold(f64::NEG_INFINITY, f64::max);
        self.flagged_steps = self.steps.iter().filter(|s| s.flagged).count();
        self.gamma1_star_w = self.windows.iter().map(|w| w.gamma1_star_w).collect();
    }

    pub fn mean_gamma1(&self) -> f64 {
        if self.gamma1_star_w.is_empty() {
            0.0
        } else {
            self.gamma1_star_w.iter().sum::<f64>() / self.gamma1_star_w.len() as f64
        }
    }

    /// Imported grid energy over steps `from..to`, kWh.
    pub fn grid_energy_kwh(&self, from: usize, to: usize) -> f64 {
        let dt_h = self.step_hours();
        self.steps[from..to.min(self.steps.len())].iter().map(|s| s.w_w.max(0.0) * dt_h / 1000.0).sum()
    }

    pub fn compare_with_baseline(&mut self, baseline: &SimulationReport) {
        let dr_windows = self
            .windows
            .iter()
            .filter(|w| w.dr_active())
            .map(|w| WindowMetric {
                start_step: w.start_step,
                grid_energy_kwh: self.grid_energy_kwh(w.start_step, w.start_step + w.len),
                baseline_grid_energy_kwh: baseline.grid_energy_kwh(w.start_step, w.start_step + w.len),
            })
            .collect();
        self.comparison = Some(BaselineComparison {
            peak_grid_energy_delta_kwh: self.peak_grid_energy_kwh - baseline.peak_grid_energy_kwh,
            total_grid_energy_delta_kwh: self.total_grid_energy_kwh - baseline.total_grid_energy_kwh,
            energy_cost_delta: self.energy_cost - baseline.energy_cost,
            dr_windows,
        });
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Column-stable per-step trace.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t_iso,x_room_truth_c,u_w,w_w,dr_active,price,gamma1_w\n");
        for s in &self.steps {
            writeln!(
                out,
                "{},{:.6},{:.3},{:.3},{},{},{:.3}",
                s.t_iso,
                s.room_truth(),
                s.u_w,
                s.w_w,
                u8::from(s.dr_active),
                s.price,
                s.gamma1_w
            )
            .unwrap();
        }
        out
    }

    /// Writes `report<suffix>.json` and `trace<suffix>.csv` into `dir`.
    pub fn write(&self, dir: &Path, suffix: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("report{suffix}.json")), serde_json::to_string_pretty(&self.to_json())? + "\n")?;
        std::fs::write(dir.join(format!("trace{suffix}.csv")), self.trace_csv())?;
        Ok(())
    }
}
