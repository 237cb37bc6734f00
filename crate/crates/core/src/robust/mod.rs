//! Robust flexibility assessment.
//!
//! Every constraint row of the window problem is written as
//!
//! ```text
//! offset + svᵀv + max_{w̃∈𝒲} (Kᵀsv + Mᵀsw)ᵀw̃ + max_{d̃∈𝒟̃} (Pᵀsv + sd)ᵀd̃ ≤ 0
//! ```
//!
//! where `(sv, sw, sd)` are the row's sensitivities to the stacked PV power, grid
//! power and disturbances. The two inner maxima are replaced by their LP duals,
//! which is exact; the γ·dual products are removed by fixing γ and bisecting.

mod assess;
mod compact;
pub mod oracle;
mod reformulation;

pub use assess::{
    assess_flexibility, bisection_iteration_bound, precompute_disturbance_policy, verify_policy,
    verify_robust_feasibility, AssessmentOptions, FixedDisturbancePolicy, FlexibilityAssessment, Gamma2Policy,
    Probe, Verification, VERIFY_TOL,
};
pub use reformulation::{assemble_reformulation, FaultInjection, ProgramCounts, Reformulation, ReformulationOptions};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{DisturbanceUncertainty, FlexibilitySet, OperatingConstraints, Placement};
use crate::error::{Error, Result};
use crate::lp::{max_over_polytope, LinearProgram, LpStatus, Polytope};
use crate::thermal::LiftedModel;

/// Affine decision rule `𝐮 = v + K𝐰̃ + P𝐝̃` for a single-input heat pump.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    pub v: DVector<f64>,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Disturbance channels per step.
    pub channels: usize,
}

impl AffinePolicy {
    /// Rejects a `P` that reads the current or a future forecast error.
    pub fn new(v: DVector<f64>, k: DMatrix<f64>, p: DMatrix<f64>, channels: usize) -> Result<Self> {
        let n = v.len();
        if k.nrows() != n || p.nrows() != n || channels == 0 || p.ncols() != n * channels {
            return Err(Error::DimensionMismatch(format!(
                "policy blocks: v {n}, K {}x{}, P {}x{} with {channels} channels",
                k.nrows(),
                k.ncols(),
                p.nrows(),
                p.ncols()
            )));
        }
        if let Some((t, c)) = first_anticipative_entry(&p, channels) {
            return Err(Error::InvalidArgument(format!(
                "P[{t}, {c}] = {} reads the forecast error of step {} at step {t}",
                p[(t, c)],
                c / channels
            )));
        }
        Ok(Self { v, k, p, channels })
    }

    pub fn zero(horizon: usize, h: usize, channels: usize) -> Self {
        Self {
            v: DVector::zeros(horizon),
            k: DMatrix::zeros(horizon, h),
            p: DMatrix::zeros(horizon, horizon * channels),
            channels,
        }
    }

    pub fn horizon(&self) -> usize {
        self.v.len()
    }

    /// `u_t` given the request and the forecast errors. Entries of `d̃` at steps `≥ t` are never read.
    pub fn action(&self, t: usize, w_tilde: &DVector<f64>, d_tilde: &DVector<f64>) -> f64 {
        let mut u = self.v[t] + self.k.row(t).dot(&w_tilde.transpose());
        for c in 0..t * self.channels {
            u += self.p[(t, c)] * d_tilde[c];
        }
        u
    }

    pub fn actions(&self, w_tilde: &DVector<f64>, d_tilde: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.horizon(), |t, _| self.action(t, w_tilde, d_tilde))
    }

    /// True when `u_t` ignores request entries scheduled after step `t`.
    pub fn k_is_causal(&self, placement: &Placement) -> bool {
        (0..self.k.nrows()).all(|t| (0..self.k.ncols()).all(|s| placement.start + s <= t || self.k[(t, s)] == 0.0))
    }
}

/// Whether `P[t, c]` may be nonzero: column `c` belongs to a strictly earlier step.
pub fn p_entry_is_free(t: usize, c: usize, channels: usize) -> bool {
    c / channels < t
}

/// Whether `K[t, s]` may be nonzero under the causal-K restriction.
pub fn k_entry_is_causal(t: usize, s: usize, placement: &Placement) -> bool {
    placement.start + s <= t
}

fn first_anticipative_entry(p: &DMatrix<f64>, channels: usize) -> Option<(usize, usize)> {
    (0..p.nrows())
        .flat_map(|t| (0..p.ncols()).map(move |c| (t, c)))
        .find(|&(t, c)| !p_entry_is_free(t, c, channels) && p[(t, c)] != 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowGroup {
    /// Comfort rows on the predicted room temperature.
    State,
    /// PV availability rows on `u`.
    Input,
    /// Rows on the total heat-pump power `u + w`.
    Mixed,
}

/// One robust constraint row in sensitivity form.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub group: RowGroup,
    /// Index within its group.
    pub index: usize,
    pub step: usize,
    pub offset: f64,
    pub sv: DVector<f64>,
    pub sw: DVector<f64>,
    pub sd: DVector<f64>,
}

impl ConstraintRow {
    pub fn flex_coeffs(&self, policy: &AffinePolicy, placement: &Placement) -> DVector<f64> {
        let mut a = policy.k.tr_mul(&self.sv);
        for j in 0..placement.len {
            a[j] += self.sw[placement.start + j];
        }
        a
    }

    pub fn dist_coeffs(&self, policy: &AffinePolicy) -> DVector<f64> {
        policy.p.tr_mul(&self.sv) + &self.sd
    }

    pub fn nominal(&self, policy: &AffinePolicy) -> f64 {
        self.offset + self.sv.dot(&policy.v)
    }

    /// Scale applied to the row inside the LP so that power rows read in kW.
    pub fn lp_scale(&self) -> f64 {
        match self.group {
            RowGroup::State => 1.0,
            RowGroup::Input | RowGroup::Mixed => 1e-3,
        }
    }
}

/// Everything that defines one window assessment.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustProblem {
    pub lifted: LiftedModel,
    pub constraints: OperatingConstraints,
    pub uncertainty: DisturbanceUncertainty,
    pub placement: Placement,
    pub x0: DVector<f64>,
    pub w_bar: DVector<f64>,
    pub d_hat: DVector<f64>,
}

impl RobustProblem {
    pub fn new(
        lifted: LiftedModel,
        constraints: OperatingConstraints,
        uncertainty: DisturbanceUncertainty,
        placement: Placement,
        x0: DVector<f64>,
        w_bar: DVector<f64>,
        d_hat: DVector<f64>,
    ) -> Result<Self> {
        let n_steps = lifted.horizon;
        let checks = [
            ("constraint horizon", constraints.horizon, n_steps),
            ("uncertainty horizon", uncertainty.horizon, n_steps),
            ("uncertainty channels", uncertainty.p(), lifted.p),
            ("placement horizon", placement.horizon, n_steps),
            ("initial state", x0.len(), lifted.n),
            ("nominal grid power", w_bar.len(), n_steps),
            ("disturbance forecast", d_hat.len(), lifted.p * n_steps),
            ("constraint state size", constraints.n, lifted.n),
        ];
        for (what, got, want) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{what}: got {got}, expected {want}")));
            }
        }
        Ok(Self { lifted, constraints, uncertainty, placement, x0, w_bar, d_hat })
    }

    pub fn horizon(&self) -> usize {
        self.lifted.horizon
    }

    pub fn h(&self) -> usize {
        self.placement.len
    }

    pub fn channels(&self) -> usize {
        self.lifted.p
    }

    /// State rows, then input rows, then mixed rows, each in constraint order.
    pub fn rows(&self) -> Vec<ConstraintRow> {
        let n_steps = self.horizon();
        let l = &self.lifted;
        let c = &self.constraints;
        let mut rows = Vec::with_capacity(6 * n_steps);
        let g_x = c.g_x();
        let free = &l.f_x * &self.x0;
        for i in 0..c.num_state_rows() {
            let k = i / 2;
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let rr = l.room_row(k);
            let sv = l.f_u.row(rr).transpose() * s;
            let sw = l.f_w.row(rr).transpose() * s;
            let sd = l.f_d.row(rr).transpose() * s;
            let offset = s * free[rr] + sw.dot(&self.w_bar) + sd.dot(&self.d_hat) - g_x[i];
            rows.push(ConstraintRow { group: RowGroup::State, index: i, step: k, offset, sv, sw, sd });
        }
        let g_u = c.g_u();
        for j in 0..c.num_input_rows() {
            let t = j / 2;
            let s = if j % 2 == 0 { 1.0 } else { -1.0 };
            let mut sv = DVector::zeros(n_steps);
            sv[t] = s;
            rows.push(ConstraintRow {
                group: RowGroup::Input,
                index: j,
                step: t,
                offset: -g_u[j],
                sv,
                sw: DVector::zeros(n_steps),
                sd: DVector::zeros(l.p * n_steps),
            });
        }
        let g_uw = c.g_uw();
        for k in 0..c.num_mixed_rows() {
            let t = k / 2;
            let s = if k % 2 == 0 { 1.0 } else { -1.0 };
            let mut sv = DVector::zeros(n_steps);
            sv[t] = s;
            let sw = sv.clone();
            rows.push(ConstraintRow {
                group: RowGroup::Mixed,
                index: k,
                step: t,
                offset: s * self.w_bar[t] - g_uw[k],
                sv,
                sw,
                sd: DVector::zeros(l.p * n_steps),
            });
        }
        rows
    }
}

/// Row value split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowValue {
    pub nominal: f64,
    pub flex_term: f64,
    pub dist_term: f64,
}

impl RowValue {
    pub fn total(&self) -> f64 {
        self.nominal + self.flex_term + self.dist_term
    }
}

/// Left-hand side of every robust row at `policy`, with both inner maxima
/// evaluated on the primal side by [`max_over_polytope`].
pub fn worst_case_row_values(
    policy: &AffinePolicy,
    problem: &RobustProblem,
    flex: &FlexibilitySet,
) -> Result<Vec<RowValue>> {
    if flex.h != problem.h() {
        return Err(Error::DimensionMismatch(format!("flexibility window {} vs placement {}", flex.h, problem.h())));
    }
    let d_poly = problem.uncertainty.polytope();
    problem
        .rows()
        .iter()
        .map(|row| {
            let a = row.flex_coeffs(policy, &problem.placement);
            let b = row.dist_coeffs(policy);
            let flex_term = if a.iter().all(|v| *v == 0.0) { 0.0 } else { max_over_polytope(&a, &flex.polytope)?.0 };
            let dist_term = max_over_polytope(&b, &d_poly)?.0;
            Ok(RowValue { nominal: row.nominal(policy), flex_term, dist_term })
        })
        .collect()
}

/// The two dual programs `min{gᵀy : Hᵀy = c, y ≥ 0}` of one row.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    pub flex: LinearProgram,
    pub dist: LinearProgram,
}

/// Dual of `max{cᵀx : Hx ≤ g}`.
pub fn dual_of_support(c: &DVector<f64>, set: &Polytope) -> LinearProgram {
    let l = set.num_rows();
    let mut lp = LinearProgram::new(l);
    lp.objective = set.g.iter().copied().collect();
    for i in 0..l {
        lp.set_bounds(i, 0.0, f64::INFINITY);
    }
    for j in 0..set.dim() {
        let row: Vec<(usize, f64)> = (0..l).map(|i| (i, set.h[(i, j)])).collect();
        lp.add_eq(&row, c[j]);
    }
    lp
}

pub fn dualize_row(c_w: &DVector<f64>, c_d: &DVector<f64>, flex: &Polytope, dist: &Polytope) -> DualPair {
    DualPair { flex: dual_of_support(c_w, flex), dist: dual_of_support(c_d, dist) }
}

/// Optimal value of a dual program; primal unboundedness shows up as dual infeasibility.
pub fn solve_dual_value(lp: &LinearProgram) -> Result<f64> {
    let sol = crate::lp::solve_lp(lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective_value),
        LpStatus::Infeasible => Err(Error::Unbounded("dual infeasible: support function is unbounded".into())),
        LpStatus::Unbounded => Err(Error::EmptyPolytope),
    }
}
