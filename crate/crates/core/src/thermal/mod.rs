//! Discrete-time building thermal models.
//!
//! The control model is `x⁺ = A x + B u + R w + D d` with `u` the heat-pump power
//! drawn from local PV, `w` the power drawn from the grid and `d = (ambient °C,
//! irradiance W/m²)`. Both powers feed the same heat pump, so `B` and `R` already
//! include the coefficient of performance.

mod identify;
mod lifted;
mod truth;

pub use identify::{identify_model, multistep_rmse, one_step_rmse, REFINE_HORIZON, IdentificationSample, StateEstimator};
pub use lifted::{lift_dynamics, LiftedModel};
pub use truth::{RcParameters, TruthModel};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of disturbance channels: ambient temperature and global irradiance.
pub const DISTURBANCE_CHANNELS: usize = 2;
/// Default heat-pump coefficient of performance.
pub const DEFAULT_COP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub sample_period_s: f64,
    pub cop: f64,
    /// Index of the room-air temperature in the state vector.
    pub room_index: usize,
}

impl ThermalModel {
    /// Validates dimensions, the sampling period, the COP and stability of `A`.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        r: DMatrix<f64>,
        d: DMatrix<f64>,
        sample_period_s: f64,
        cop: f64,
        room_index: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!("A must be square and nonempty, got {}x{}", n, a.ncols())));
        }
        for (name, m) in [("B", &b), ("R", &r), ("D", &d)] {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch(format!("{name} has {} rows, state has {n}", m.nrows())));
            }
        }
        if b.ncols() != 1 || r.ncols() != 1 {
            return Err(Error::DimensionMismatch("B and R must have a single column".into()));
        }
        if room_index >= n {
            return Err(Error::DimensionMismatch(format!("room index {room_index} outside state of size {n}")));
        }
        if !(sample_period_s > 0.0) || !(cop > 0.0) {
            return Err(Error::InvalidArgument("sample period and COP must be positive".into()));
        }
        let all = a.iter().chain(b.iter()).chain(r.iter()).chain(d.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model matrices contain non-finite entries".into()));
        }
        let model = Self { a, b, r, d, sample_period_s, cop, room_index };
        let rho = model.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.d.ncols()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn room(&self, x: &DVector<f64>) -> f64 {
        x[self.room_index]
    }

    /// `1 × n` selector of the room temperature.
    pub fn room_selector(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(1, self.n());
        s[(0, self.room_index)] = 1.0;
        s
    }

    pub fn step(&self, x: &DVector<f64>, u: f64, w: f64, d: &[f64]) -> DVector<f64> {
        let mut next = &self.a * x;
        next += self.b.column(0) * u;
        next += self.r.column(0) * w;
        for (j, dj) in d.iter().enumerate() {
            next += self.d.column(j) * *dj;
        }
        next
    }

    /// Fixed point of the dynamics under constant inputs.
    pub fn steady_state(&self, u: f64, w: f64, d: &[f64]) -> DVector<f64> {
        let n = self.n();
        let rhs = self.step(&DVector::zeros(n), u, w, d);
        let lhs = DMatrix::identity(n, n) - &self.a;
        // A is stable, so I − A is invertible.
        lhs.lu().solve(&rhs).expect("I - A is singular for a stable model")
    }

    /// Constant grid power holding the room at `setpoint` with no PV input.
    pub fn steady_grid_power(&self, setpoint: f64, d: &[f64]) -> f64 {
        let base = self.room(&self.steady_state(0.0, 0.0, d));
        let gain = self.room(&self.steady_state(0.0, 1.0, &vec![0.0; d.len()]));
        (setpoint - base) / gain
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ModelJson::from(self)).expect("model serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: ModelJson = serde_json::from_value(value.clone())?;
        raw.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }
}

/// One-step update of the control model.
pub fn simulate_step(model: &ThermalModel, x: &DVector<f64>, u: f64, w: f64, d: &[f64]) -> DVector<f64> {
    model.step(x, u, w, d)
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixJson {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
}

impl MatrixJson {
    fn into_matrix(self, name: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix {name}: {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    a: MatrixJson,
    b: MatrixJson,
    r: MatrixJson,
    d: MatrixJson,
    sample_period_s: f64,
    cop: f64,
    room_index: usize,
}

impl From<&ThermalModel> for ModelJson {
    fn from(m: &ThermalModel) -> Self {
        Self {
            a: (&m.a).into(),
            b: (&m.b).into(),
            r: (&m.r).into(),
            d: (&m.d).into(),
            sample_period_s: m.sample_period_s,
            cop: m.cop,
            room_index: m.room_index,
        }
    }
}

impl ModelJson {
    fn into_model(self) -> Result<ThermalModel> {
        ThermalModel::new(
            self.a.into_matrix("a")?,
            self.b.into_matrix("b")?,
            self.r.into_matrix("r")?,
            self.d.into_matrix("d")?,
            self.sample_period_s,
            self.cop,
            self.room_index,
        )
    }
}
