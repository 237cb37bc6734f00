use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ThermalModel, DEFAULT_COP};
use crate::error::Result;

/// Three-node RC network: room air, building envelope, radiator water.
///
/// Capacities in J/K, conductances in W/K, solar apertures in m² (W per W/m²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcParameters {
    pub c_room: f64,
    pub c_envelope: f64,
    pub c_radiator: f64,
    pub h_room_envelope: f64,
    pub h_envelope_ambient: f64,
    pub h_room_ambient: f64,
    pub h_radiator_room: f64,
    pub solar_room: f64,
    pub solar_envelope: f64,
    pub cop: f64,
}

impl Default for RcParameters {
    fn default() -> Self {
        Self {
            c_room: 2.0e6,
            c_envelope: 3.0e7,
            c_radiator: 3.0e5,
            h_room_envelope: 400.0,
            h_envelope_ambient: 120.0,
            h_room_ambient: 60.0,
            h_radiator_room: 250.0,
            solar_room: 2.0,
            solar_envelope: 1.0,
            cop: DEFAULT_COP,
        }
    }
}

impl RcParameters {
    /// Continuous-time `(A_c, B_c, D_c)` with state (room, envelope, radiator).
    fn continuous(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (cr, ce, ch) = (self.c_room, self.c_envelope, self.c_radiator);
        let (hre, hea, hra, hhr) = (self.h_room_envelope, self.h_envelope_ambient, self.h_room_ambient, self.h_radiator_room);
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(3, 3, &[
            -(hre + hra + hhr) / cr, hre / cr, hhr / cr,
            hre / ce, -(hre + hea) / ce, 0.0,
            hhr / ch, 0.0, -hhr / ch,
        ]);
        let b = DVector::from_vec(vec![0.0, 0.0, self.cop / ch]);
        #[rustfmt::skip]
        let d = DMatrix::from_row_slice(3, 2, &[
            hra / cr, self.solar_room / cr,
            hea / ce, self.solar_envelope / ce,
            0.0, 0.0,
        ]);
        (a, b, d)
    }

    /// Zero-order-hold discretization through the exponential of the augmented
    /// matrix `[[A_c, [B_c D_c]], [0, 0]]·Δt`.
    pub fn discretize(&self, sample_period_s: f64) -> Result<ThermalModel> {
        let (a, b, d) = self.continuous();
        let (n, k) = (3, 3);
        let mut aug = DMatrix::zeros(n + k, n + k);
        aug.view_mut((0, 0), (n, n)).copy_from(&a);
        aug.view_mut((0, n), (n, 1)).copy_from(&b);
        aug.view_mut((0, n + 1), (n, 2)).copy_from(&d);
        let e = (aug * sample_period_s).exp();
        let ad = e.view((0, 0), (n, n)).into_owned();
        let bd = e.view((0, n), (n, 1)).into_owned();
        let dd = e.view((0, n + 1), (n, 2)).into_owned();
        ThermalModel::new(ad, bd.clone(), bd, dd, sample_period_s, self.cop, 0)
    }
}

/// Higher-order plant used as ground truth in closed-loop runs.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthModel {
    pub model: ThermalModel,
    pub params: RcParameters,
    /// Half-width of the uniform noise added to every state per step (°C).
    pub noise_amplitude: f64,
}

impl TruthModel {
    pub fn new(params: RcParameters, sample_period_s: f64, noise_amplitude: f64) -> Result<Self> {
        Ok(Self { model: params.discretize(sample_period_s)?, params, noise_amplitude })
    }

    pub fn bundled(sample_period_s: f64) -> Result<Self> {
        Self::new(RcParameters::default(), sample_period_s, 0.0)
    }

    pub fn with_noise(mut self, amplitude: f64) -> Self {
        self.noise_amplitude = amplitude;
        self
    }

    pub fn step<R: Rng>(&self, x: &DVector<f64>, u: f64, w: f64, d: &[f64], rng: &mut R) -> DVector<f64> {
        let mut next = self.model.step(x, u, w, d);
        if self.noise_amplitude > 0.0 {
            for v in next.iter_mut() {
                *v += rng.gen_range(-self.noise_amplitude..=self.noise_amplitude);
            }
        }
        next
    }

    /// State in equilibrium with constant inputs.
    pub fn steady_state(&self, u: f64, w: f64, d: &[f64]) -> DVector<f64> {
        self.model.steady_state(u, w, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discretization_is_stable_and_consistent() {
        let t = TruthModel::bundled(300.0).unwrap();
        assert!(t.model.spectral_radius() < 1.0);
        // Steady state of the discrete model equals the continuous equilibrium.
        let (a, b, d) = t.params.continuous();
        let inputs = [5.0, 200.0];
        let xs = t.steady_state(0.0, 800.0, &inputs);
        let deriv = &a * &xs + &b * 800.0 + &d * DVector::from_vec(inputs.to_vec());
        assert!(deriv.amax() < 1e-9, "{deriv}");
    }

    #[test]
    fn halving_the_period_composes() {
        let p = RcParameters::default();
        let fine = p.discretize(150.0).unwrap();
        let coarse = p.discretize(300.0).unwrap();
        let x = DVector::from_vec(vec![21.0, 15.0, 30.0]);
        let mid = fine.step(&x, 300.0, 900.0, &[3.0, 100.0]);
        let two = fine.step(&mid, 300.0, 900.0, &[3.0, 100.0]);
        let one = coarse.step(&x, 300.0, 900.0, &[3.0, 100.0]);
        assert!((two - one).amax() < 1e-9);
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let t = TruthModel::bundled(300.0).unwrap().with_noise(0.01);
        let x = DVector::from_vec(vec![21.0, 15.0, 30.0]);
        let clean = t.model.step(&x, 0.0, 1000.0, &[2.0, 0.0]);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = t.step(&x, 0.0, 1000.0, &[2.0, 0.0], &mut r1);
        let b = t.step(&x, 0.0, 1000.0, &[2.0, 0.0], &mut r2);
        assert_eq!(a, b);
        assert!((a - clean).amax() <= 0.01);
    }
}
