use nalgebra::{DMatrix, DVector};

use super::ThermalModel;
use crate::error::{Error, Result};

/// Stacked predictions `𝐱 = F_x x₀ + F_u 𝐮 + F_w 𝐰 + F_d 𝐝` for `x₁..x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel {
    pub f_x: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub f_w: DMatrix<f64>,
    pub f_d: DMatrix<f64>,
    pub horizon: usize,
    pub n: usize,
    pub p: usize,
    pub room_index: usize,
}

impl LiftedModel {
    /// Row of `𝐱` holding the room temperature after step `k` (i.e. `x_{k+1}`).
    pub fn room_row(&self, k: usize) -> usize {
        k * self.n + self.room_index
    }

    pub fn predict(&self, x0: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.f_x * x0 + &self.f_u * u + &self.f_w * w + &self.f_d * d
    }
}

pub fn lift_dynamics(model: &ThermalModel, horizon: usize) -> Result<LiftedModel> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least one step".into()));
    }
    let (n, p) = (model.n(), model.p());
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..=horizon {
        powers.push(&model.a * &powers[k - 1]);
    }
    let ab: Vec<DMatrix<f64>> = powers.iter().map(|ak| ak * &model.b).collect();
    let ar: Vec<DMatrix<f64>> = powers.iter().map(|ak| ak * &model.r).collect();
    let ad: Vec<DMatrix<f64>> = powers.iter().map(|ak| ak * &model.d).collect();

    let mut f_x = DMatrix::zeros(n * horizon, n);
    let mut f_u = DMatrix::zeros(n * horizon, horizon);
    let mut f_w = DMatrix::zeros(n * horizon, horizon);
    let mut f_d = DMatrix::zeros(n * horizon, p * horizon);
    for i in 0..horizon {
        f_x.view_mut((i * n, 0), (n, n)).copy_from(&powers[i + 1]);
        for j in 0..=i {
            f_u.view_mut((i * n, j), (n, 1)).copy_from(&ab[i - j]);
            f_w.view_mut((i * n, j), (n, 1)).copy_from(&ar[i - j]);
            f_d.view_mut((i * n, j * p), (n, p)).copy_from(&ad[i - j]);
        }
    }
    Ok(LiftedModel { f_x, f_u, f_w, f_d, horizon, n, p, room_index: model.room_index })
}
