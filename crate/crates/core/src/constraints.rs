//! Polytopic sets: the flexibility set 𝒲, the forecast-error box 𝒟̃, and the
//! comfort/input/mixed operating constraints.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::Polytope;

/// Which inequality of 𝒲 a row of `H_w` encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlexRow {
    /// `w̃_t ≤ 0`
    UpperAmplitude(usize),
    /// `−w̃_t ≤ γ₁`
    LowerAmplitude(usize),
    /// `w̃_{t+1} − w̃_t ≤ γ₂`
    RampUp(usize),
    /// `w̃_t − w̃_{t+1} ≤ γ₂`
    RampDown(usize),
}

/// Reduction-only flexibility set over an `h`-step window.
///
/// Rows of `H_w` come in a fixed order: `h` upper-amplitude rows, `h` lower-amplitude
/// rows, `h−1` up-ramp rows, `h−1` down-ramp rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexibilitySet {
    pub gamma1: f64,
    pub gamma2: f64,
    pub h: usize,
    pub rows: Vec<FlexRow>,
    pub polytope: Polytope,
}

pub fn build_flexibility_polytope(gamma1: f64, gamma2: f64, h: usize) -> Result<FlexibilitySet> {
    if !(gamma1 >= 0.0) || !(gamma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!("flexibility bounds must be nonnegative, got ({gamma1}, {gamma2})")));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("flexibility window must cover at least one step".into()));
    }
    let rows = flex_rows(h);
    let mut hw = DMatrix::zeros(rows.len(), h);
    let mut gw = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        match *row {
            FlexRow::UpperAmplitude(t) => hw[(i, t)] = 1.0,
            FlexRow::LowerAmplitude(t) => {
                hw[(i, t)] = -1.0;
                gw[i] = gamma1;
            }
            FlexRow::RampUp(t) => {
                hw[(i, t + 1)] = 1.0;
                hw[(i, t)] = -1.0;
                gw[i] = gamma2;
            }
            FlexRow::RampDown(t) => {
                hw[(i, t)] = 1.0;
                hw[(i, t + 1)] = -1.0;
                gw[i] = gamma2;
            }
        }
    }
    Ok(FlexibilitySet { gamma1, gamma2, h, rows, polytope: Polytope { h: hw, g: gw } })
}

fn flex_rows(h: usize) -> Vec<FlexRow> {
    let mut rows = Vec::with_capacity(4 * h - 2);
    rows.extend((0..h).map(FlexRow::UpperAmplitude));
    rows.extend((0..h).map(FlexRow::LowerAmplitude));
    rows.extend((0..h - 1).map(FlexRow::RampUp));
    rows.extend((0..h - 1).map(FlexRow::RampDown));
    rows
}

impl FlexibilitySet {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Coefficients `(∂g/∂γ₁, ∂g/∂γ₂)` of every row, so `g_w = γ₁·a + γ₂·b`.
    pub fn offset_pattern(&self) -> (DVector<f64>, DVector<f64>) {
        let l = self.rows.len();
        let mut a = DVector::zeros(l);
        let mut b = DVector::zeros(l);
        for (i, row) in self.rows.iter().enumerate() {
            match row {
                FlexRow::LowerAmplitude(_) => a[i] = 1.0,
                FlexRow::RampUp(_) | FlexRow::RampDown(_) => b[i] = 1.0,
                FlexRow::UpperAmplitude(_) => {}
            }
        }
        (a, b)
    }

    /// Membership through `H_w w̃ − g_w ≤ tol`. The single predicate shared by DR-request validation.
    pub fn contains(&self, w_tilde: &DVector<f64>, tol: f64) -> bool {
        w_tilde.len() == self.h && self.polytope.contains(w_tilde, tol)
    }

    pub fn max_violation(&self, w_tilde: &DVector<f64>) -> f64 {
        self.polytope.max_residual(w_tilde).max(0.0)
    }
}

/// Binary `N × h` placement of the flexibility window inside the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub horizon: usize,
    pub start: usize,
    pub len: usize,
}

pub fn build_placement(horizon: usize, start: usize, len: usize) -> Result<Placement> {
    if len == 0 || start + len > horizon {
        return Err(Error::WindowOutOfHorizon { start, len, horizon });
    }
    Ok(Placement { horizon, start, len })
}

impl Placement {
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.horizon, self.len);
        for j in 0..self.len {
            m[(self.start + j, j)] = 1.0;
        }
        m
    }

    /// Window index of horizon step `t`, if the window covers it.
    pub fn window_index(&self, t: usize) -> Option<usize> {
        (t >= self.start && t < self.start + self.len).then(|| t - self.start)
    }

    /// `w̄ + M w̃`.
    pub fn inject(&self, w_bar: &DVector<f64>, w_tilde: &DVector<f64>) -> DVector<f64> {
        let mut w = w_bar.clone();
        for j in 0..self.len {
            w[self.start + j] += w_tilde[j];
        }
        w
    }
}

/// Per-step, per-channel box `|d̃| ≤ δ` over the horizon, as `H_d = [I; −I]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceUncertainty {
    /// Half-width per channel (ambient °C, irradiance W/m²).
    pub delta: Vec<f64>,
    pub horizon: usize,
}

impl DisturbanceUncertainty {
    pub fn new(delta: Vec<f64>, horizon: usize) -> Result<Self> {
        if delta.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("uncertainty bounds must be finite and nonnegative: {delta:?}")));
        }
        Ok(Self { delta, horizon })
    }

    pub fn p(&self) -> usize {
        self.delta.len()
    }

    pub fn dim(&self) -> usize {
        self.p() * self.horizon
    }

    pub fn num_rows(&self) -> usize {
        2 * self.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&v| v == 0.0)
    }

    /// Bound on stacked coordinate `k` (step `k / p`, channel `k % p`).
    pub fn bound(&self, k: usize) -> f64 {
        self.delta[k % self.p()]
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.bound(k)).collect()
    }

    pub fn lower(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| -self.bound(k)).collect()
    }

    pub fn polytope(&self) -> Polytope {
        Polytope::from_box(&self.lower(), &self.upper()).expect("box bounds have equal length")
    }

    /// `max_{d̃ ∈ 𝒟̃} cᵀd̃ = Σ δ_k |c_k|`.
    pub fn support(&self, c: &[f64]) -> f64 {
        c.iter().enumerate().map(|(k, ck)| if *ck == 0.0 { 0.0 } else { ck.abs() * self.bound(k) }).sum()
    }

    pub fn contains(&self, d: &DVector<f64>, tol: f64) -> bool {
        d.len() == self.dim() && d.iter().enumerate().all(|(k, v)| v.abs() <= self.bound(k) + tol)
    }
}

/// Comfort band on the room temperature, PV availability on `u`, and the cap on `u + w`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingConstraints {
    pub comfort_lower: f64,
    pub comfort_upper: f64,
    /// Upper bound on `u_t` (PV availability forecast), W.
    pub pv_upper: Vec<f64>,
    pub total_power_cap: f64,
    pub horizon: usize,
    pub n: usize,
    pub room_index: usize,
}

pub fn build_operating_constraints(
    comfort: (f64, f64),
    pv_forecast: &[f64],
    total_power_cap: f64,
    n: usize,
    room_index: usize,
) -> Result<OperatingConstraints> {
    let (lo, hi) = comfort;
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("comfort band [{lo}, {hi}] is empty")));
    }
    if pv_forecast.is_empty() {
        return Err(Error::InvalidArgument("empty PV forecast".into()));
    }
    if pv_forecast.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("PV forecast must be nonnegative".into()));
    }
    if !(total_power_cap > 0.0) {
        return Err(Error::InvalidArgument("total power cap must be positive".into()));
    }
    if room_index >= n {
        return Err(Error::DimensionMismatch(format!("room index {room_index} outside state of size {n}")));
    }
    Ok(OperatingConstraints {
        comfort_lower: lo,
        comfort_upper: hi,
        pv_upper: pv_forecast.to_vec(),
        total_power_cap,
        horizon: pv_forecast.len(),
        n,
        room_index,
    })
}

impl OperatingConstraints {
    /// Rows of `G_x`: per step, `T ≤ upper` then `−T ≤ −lower`.
    pub fn num_state_rows(&self) -> usize {
        2 * self.horizon
    }

    pub fn num_input_rows(&self) -> usize {
        2 * self.horizon
    }

    pub fn num_mixed_rows(&self) -> usize {
        2 * self.horizon
    }

    pub fn g_x_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(2 * self.horizon, self.n * self.horizon);
        for k in 0..self.horizon {
            g[(2 * k, k * self.n + self.room_index)] = 1.0;
            g[(2 * k + 1, k * self.n + self.room_index)] = -1.0;
        }
        g
    }

    pub fn g_x(&self) -> DVector<f64> {
        DVector::from_fn(2 * self.horizon, |i, _| if i % 2 == 0 { self.comfort_upper } else { -self.comfort_lower })
    }

    /// Rows of `G_u`: per step, `u ≤ pv` then `−u ≤ 0`.
    pub fn g_u_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(2 * self.horizon, self.horizon, |i, j| {
            if i / 2 != j {
                0.0
            } else if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
    }

    pub fn g_u(&self) -> DVector<f64> {
        DVector::from_fn(2 * self.horizon, |i, _| if i % 2 == 0 { self.pv_upper[i / 2] } else { 0.0 })
    }

    /// `L_u = L_w`: per step, `u + w ≤ cap` then `−u − w ≤ 0`.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        self.g_u_matrix()
    }

    pub fn g_uw(&self) -> DVector<f64> {
        DVector::from_fn(2 * self.horizon, |i, _| if i % 2 == 0 { self.total_power_cap } else { 0.0 })
    }

    /// Largest violation of the three constraint groups by a stacked trajectory.
    pub fn max_violation(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let vx = self.g_x_matrix() * x - self.g_x();
        let vu = self.g_u_matrix() * u - self.g_u();
        let vm = self.l_matrix() * (u + w) - self.g_uw();
        vx.iter().chain(vu.iter()).chain(vm.iter()).copied().fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x, u, w) <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::enumerate_polytope_vertices;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_member(w: &[f64], g1: f64, g2: f64) -> bool {
        w.iter().all(|&v| v <= 0.0 && -v <= g1) && w.windows(2).all(|p| (p[1] - p[0]).abs() <= g2)
    }

    #[test]
    fn single_step_window() {
        let f = build_flexibility_polytope(300.0, 50.0, 1).unwrap();
        assert_eq!(f.num_rows(), 2);
        assert_eq!(f.polytope.h, DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        assert_eq!(f.polytope.g, DVector::from_vec(vec![0.0, 300.0]));
    }

    #[test]
    fn two_step_membership() {
        let f = build_flexibility_polytope(500.0, 150.0, 2).unwrap();
        assert_eq!(f.num_rows(), 6);
        assert!(f.contains(&DVector::from_vec(vec![-300.0, -400.0]), 0.0));
        assert!(!f.contains(&DVector::from_vec(vec![0.0, -200.0]), 0.0));
    }

    #[test]
    fn row_structure() {
        let f = build_flexibility_polytope(500.0, 150.0, 5).unwrap();
        assert_eq!(f.num_rows(), 18);
        let amp = f.rows.iter().filter(|r| matches!(r, FlexRow::UpperAmplitude(_) | FlexRow::LowerAmplitude(_))).count();
        assert_eq!(amp, 10);
        assert!(f.polytope.g.iter().all(|&g| g == 0.0 || g == 500.0 || g == 150.0));
        let (a, b) = f.offset_pattern();
        assert_eq!(a * 500.0 + b * 150.0, f.polytope.g);
        // Constant full-depth reduction is always admissible.
        assert!(f.contains(&DVector::from_element(5, -500.0), 0.0));
        assert!(f.contains(&DVector::zeros(5), 0.0));
    }

    #[test]
    fn membership_agrees_with_direct_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let h = rng.gen_range(1..6);
            let (g1, g2) = (rng.gen_range(0.0..600.0), rng.gen_range(0.0..200.0));
            let f = build_flexibility_polytope(g1, g2, h).unwrap();
            let w: Vec<f64> = (0..h).map(|_| rng.gen_range(-700.0..100.0)).collect();
            assert_eq!(f.contains(&DVector::from_vec(w.clone()), 0.0), direct_member(&w, g1, g2));
        }
    }

    #[test]
    fn larger_parameters_contain_smaller_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let h = rng.gen_range(1..=4);
            let (g1, g2) = (rng.gen_range(0.0..500.0), rng.gen_range(0.0..150.0));
            let small = build_flexibility_polytope(g1, g2, h).unwrap();
            let big = build_flexibility_polytope(g1 + rng.gen_range(0.0..100.0), g2 + rng.gen_range(0.0..50.0), h).unwrap();
            for v in enumerate_polytope_vertices(&small.polytope, 1e-9).unwrap() {
                assert!(big.contains(&v, 1e-9));
            }
        }
    }

    #[test]
    fn placement() {
        let m = build_placement(3, 1, 1).unwrap();
        assert_eq!(m.matrix(), DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]));
        assert_eq!(build_placement(24, 0, 24).unwrap().matrix(), DMatrix::identity(24, 24));
        assert!(matches!(build_placement(4, 3, 2), Err(Error::WindowOutOfHorizon { .. })));
        let p = build_placement(6, 2, 3).unwrap();
        let w_bar = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = p.inject(&w_bar, &DVector::from_vec(vec![-1.0, -1.0, -1.0]));
        assert_eq!(w, &w_bar + p.matrix() * DVector::from_vec(vec![-1.0, -1.0, -1.0]));
        assert_eq!((w[0], w[1], w[5]), (1.0, 2.0, 6.0));
    }

    #[test]
    fn disturbance_box() {
        let d = DisturbanceUncertainty::new(vec![2.0, 50.0], 3).unwrap();
        assert_eq!(d.num_rows(), 12);
        let poly = d.polytope();
        assert_eq!(poly.h.view((0, 0), (6, 6)), DMatrix::<f64>::identity(6, 6));
        assert_eq!(poly.h.view((6, 0), (6, 6)), -DMatrix::<f64>::identity(6, 6));
        assert!(d.contains(&DVector::zeros(6), 0.0));
        assert_eq!(d.support(&[1.0, 0.01, 0.0, 0.0, -1.0, 0.0]), 2.0 + 0.5 + 2.0);
        assert!(DisturbanceUncertainty::new(vec![-1.0, 0.0], 3).is_err());
    }

    #[test]
    fn operating_constraint_vectors() {
        let c = build_operating_constraints((19.0, 24.0), &[0.0, 500.0, 1500.0], 2000.0, 2, 0).unwrap();
        assert_eq!(c.g_x().as_slice(), &[24.0, -19.0, 24.0, -19.0, 24.0, -19.0]);
        assert_eq!(c.g_u().as_slice(), &[0.0, 0.0, 500.0, 0.0, 1500.0, 0.0]);
        let gx = c.g_x_matrix();
        assert_eq!(gx.ncols(), 6);
        // Only room components are selected.
        for k in 0..3 {
            assert_eq!(gx.column(2 * k + 1).amax(), 0.0);
        }
        // Zero PV forces u = 0.
        let z = build_operating_constraints((19.0, 24.0), &[0.0; 3], 2000.0, 1, 0).unwrap();
        let x = DVector::from_element(3, 21.0);
        let w = DVector::from_element(3, 500.0);
        assert!(z.contains(&x, &DVector::zeros(3), &w, 0.0));
        assert!(!z.contains(&x, &DVector::from_vec(vec![0.0, 1e-3, 0.0]), &w, 0.0));
    }

    proptest! {
        #[test]
        fn matrix_membership_matches_scalar_checks(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let steps = rng.gen_range(1..6);
            let n = rng.gen_range(1..=3);
            let pv: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.0..1500.0)).collect();
            let cap = rng.gen_range(500.0..2500.0);
            let c = build_operating_constraints((19.0, 24.0), &pv, cap, n, 0).unwrap();
            let x = DVector::from_fn(n * steps, |_, _| rng.gen_range(17.0..26.0));
            let u = DVector::from_fn(steps, |_, _| rng.gen_range(-100.0..1600.0));
            let w = DVector::from_fn(steps, |_, _| rng.gen_range(-200.0..2500.0));
            let scalar = (0..steps).all(|k| {
                let t = x[k * n];
                (19.0..=24.0).contains(&t) && u[k] >= 0.0 && u[k] <= pv[k] && u[k] + w[k] >= 0.0 && u[k] + w[k] <= cap
            });
            prop_assert_eq!(c.contains(&x, &u, &w, 0.0), scalar);
        }
    }
}
