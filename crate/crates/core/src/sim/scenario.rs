use serde::{Deserialize, Serialize};

use crate::control::TrackingMode;
use crate::error::{Error, Result};
use crate::robust::Gamma2Policy;

/// How the realized weather departs from the forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationPolicy {
    /// The forecast exceeds reality by the full bound on every step and channel.
    WorstCaseOverestimate,
    Nominal,
    RandomInBox,
}

/// Which price the grid operator compares with the threshold at a window start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceTrigger {
    #[default]
    WindowAverage,
    Instantaneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub delta_amb: f64,
    pub delta_sol: f64,
    pub consider_uncertainty_in_assessment: bool,
    pub realization: RealizationPolicy,
    pub nominal_horizon_steps: usize,
    pub flex_horizon_steps: usize,
    pub sample_period_s: f64,
    pub sim_steps: usize,
    pub price_threshold: f64,
    pub price_trigger: PriceTrigger,
    pub comfort: (f64, f64),
    /// Planning and assessment use the comfort band shrunk by this much on each
    /// side, °C, to absorb the control model's prediction error.
    pub model_margin_c: f64,
    pub setpoint: f64,
    pub pv_cap_w: f64,
    /// Electric power limit of the heat pump, W.
    pub total_power_cap_w: f64,
    pub lambda: f64,
    /// Nominal-plan cost per kW of step-to-step change in grid power.
    pub move_penalty: f64,
    /// Comfort penalty used when the nominal plan has to soften its bounds, $ per °C·step.
    pub nominal_soft_penalty: f64,
    /// Comfort penalty of the tracking program, per °C·step.
    pub tracking_penalty: f64,
    pub gamma2: Gamma2Policy,
    pub tracking: TrackingMode,
    pub fixed_p: bool,
    pub causal_k: bool,
    pub seed: u64,
    /// Per-state uniform noise half-width of the truth plant, °C.
    pub truth_noise: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            delta_amb: 0.0,
            delta_sol: 0.0,
            consider_uncertainty_in_assessment: true,
            realization: RealizationPolicy::WorstCaseOverestimate,
            nominal_horizon_steps: 144,
            flex_horizon_steps: 24,
            sample_period_s: 300.0,
            sim_steps: 864,
            price_threshold: 0.15,
            price_trigger: PriceTrigger::WindowAverage,
            comfort: (19.0, 24.0),
            model_margin_c: 0.3,
            setpoint: 21.0,
            pv_cap_w: 1500.0,
            total_power_cap_w: 3000.0,
            lambda: 0.1,
            move_penalty: 0.02,
            nominal_soft_penalty: 100.0,
            tracking_penalty: 1e3,
            gamma2: Gamma2Policy::default(),
            tracking: TrackingMode::Reoptimize,
            fixed_p: false,
            causal_k: false,
            seed: 0,
            truth_noise: 0.0,
        }
    }
}

impl ScenarioConfig {
    /// The five uncertainty scenarios: bounds (°C, W/m²) and whether the
    /// assessment sees them.
    pub fn preset(index: usize) -> Result<Self> {
        let (delta_amb, delta_sol, consider) = match index {
            1 => (0.0, 0.0, true),
            2 => (2.0, 50.0, true),
            3 => (5.0, 100.0, true),
            4 => (2.0, 50.0, false),
            5 => (5.0, 100.0, false),
            _ => return Err(Error::InvalidArgument(format!("scenario {index} is not one of 1..5"))),
        };
        Ok(Self { name: format!("s{index}"), delta_amb, delta_sol, consider_uncertainty_in_assessment: consider, ..Default::default() })
    }

    pub fn all_presets() -> Vec<Self> {
        (1..=5).map(|i| Self::preset(i).expect("preset exists")).collect()
    }

    /// Bounds handed to the assessment.
    pub fn assessed_delta(&self) -> (f64, f64) {
        if self.consider_uncertainty_in_assessment {
            (self.delta_amb, self.delta_sol)
        } else {
            (0.0, 0.0)
        }
    }

    /// Comfort band handed to the planner and the assessment.
    pub fn planning_band(&self) -> (f64, f64) {
        (self.comfort.0 + self.model_margin_c, self.comfort.1 - self.model_margin_c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.delta_amb >= 0.0 && self.delta_sol >= 0.0) {
            return bad("uncertainty bounds must be nonnegative".into());
        }
        if self.flex_horizon_steps == 0 || self.nominal_horizon_steps < self.flex_horizon_steps {
            return bad(format!(
                "need 0 < flexibility horizon ({}) ≤ nominal horizon ({})",
                self.flex_horizon_steps, self.nominal_horizon_steps
            ));
        }
        if self.sim_steps == 0 || !(self.sample_period_s > 0.0) {
            return bad("simulation length and sampling period must be positive".into());
        }
        if !(self.comfort.0 < self.comfort.1) {
            return bad(format!("comfort band [{}, {}] is empty", self.comfort.0, self.comfort.1));
        }
        if !(self.model_margin_c >= 0.0 && 2.0 * self.model_margin_c < self.comfort.1 - self.comfort.0) {
            return bad(format!("model margin {} °C leaves no comfort band", self.model_margin_c));
        }
        if !(self.pv_cap_w >= 0.0 && self.total_power_cap_w > 0.0 && self.lambda >= 0.0 && self.move_penalty >= 0.0) {
            return bad("PV cap, power cap and comfort weight must be nonnegative (power cap positive)".into());
        }
        if !(self.nominal_soft_penalty > 0.0 && self.tracking_penalty > 0.0 && self.truth_noise >= 0.0) {
            return bad("penalties must be positive and noise nonnegative".into());
        }
        Ok(())
    }
}
