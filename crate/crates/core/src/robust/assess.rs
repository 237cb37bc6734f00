use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::compact::{assemble_compact, GammaMode};
use super::reformulation::{assemble_reformulation, FaultInjection, ProgramCounts, ReformulationOptions};
use super::{worst_case_row_values, AffinePolicy, RobustProblem, RowGroup, RowValue};
use crate::constraints::{build_flexibility_polytope, Placement};
use crate::error::{Error, Result};
use crate::lp::{solve_lp_with, LpStatus, SolverOptions};

/// Robust rows must evaluate to at most this value to count as satisfied, measured
/// in the program's row units (°C for comfort rows, kW for power rows).
pub const VERIFY_TOL: f64 = 1e-6;

/// How `γ₂` follows the bisection variable `γ₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma2Policy {
    Fixed(f64),
    /// `γ₂ = β·γ₁`.
    Ratio(f64),
    /// Ratio during the γ₁ search, then one bisection raising γ₂ at the found γ₁.
    RatioThenAscent(f64),
}

impl Default for Gamma2Policy {
    fn default() -> Self {
        Gamma2Policy::Ratio(0.25)
    }
}

impl Gamma2Policy {
    pub fn gamma2(&self, gamma1: f64) -> f64 {
        match *self {
            Gamma2Policy::Fixed(g2) => g2,
            Gamma2Policy::Ratio(beta) | Gamma2Policy::RatioThenAscent(beta) => beta * gamma1,
        }
    }
}

/// Disturbance feedback computed offline and held fixed online.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDisturbancePolicy {
    pub p: DMatrix<f64>,
    pub channels: usize,
}

impl FixedDisturbancePolicy {
    /// `P` as applied to `problem`: rows at steps without PV are zero, because no
    /// feasible policy can act there.
    pub fn for_window(&self, problem: &RobustProblem) -> DMatrix<f64> {
        let mut p = self.p.clone();
        for (t, &pv) in problem.constraints.pv_upper.iter().enumerate() {
            if pv == 0.0 && t < p.nrows() {
                p.row_mut(t).fill(0.0);
            }
        }
        p
    }

    /// Exact 𝒟̃ backoff of every row, `max_{d̃} (Pᵀsv + sd)ᵀd̃`.
    pub fn backoffs(&self, problem: &RobustProblem) -> Vec<f64> {
        let p = self.for_window(problem);
        problem
            .rows()
            .iter()
            .map(|row| problem.uncertainty.support((p.tr_mul(&row.sv) + &row.sd).as_slice()))
            .collect()
    }

    /// Optimal 𝒟̃ duals of every row: positive and negative parts of `Pᵀsv + sd`.
    pub fn duals(&self, problem: &RobustProblem) -> Vec<DVector<f64>> {
        let p = self.for_window(problem);
        problem
            .rows()
            .iter()
            .map(|row| {
                let b = p.tr_mul(&row.sv) + &row.sd;
                let pn = b.len();
                DVector::from_fn(2 * pn, |i, _| if i < pn { b[i].max(0.0) } else { (-b[i - pn]).max(0.0) })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentOptions {
    pub gamma2: Gamma2Policy,
    /// Weight of γ₂ in the objective `−γ₁ − αγ₂`; only the ascent step uses it.
    pub alpha: f64,
    /// Bisection tolerance on γ₁, W.
    pub tolerance: f64,
    /// Upper end of the bisection bracket; the total power cap when absent.
    pub gamma1_max: Option<f64>,
    pub causal_k: bool,
    pub fixed_p: Option<FixedDisturbancePolicy>,
    pub solver: SolverOptions,
    pub fault: Option<FaultInjection>,
    /// Under a ratio policy, place the γ₁ bracket with one homogenized program before
    /// bisecting. The reported γ₁ is still certified by feasibility probes.
    pub seed_bracket: bool,
}

impl Default for AssessmentOptions {
    fn default() -> Self {
        Self {
            gamma2: Gamma2Policy::default(),
            alpha: 0.0,
            tolerance: 1.0,
            gamma1_max: None,
            causal_k: false,
            fixed_p: None,
            solver: SolverOptions::default(),
            fault: None,
            seed_bracket: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub gamma1: f64,
    pub gamma2: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexibilityAssessment {
    pub gamma1_star: f64,
    pub gamma2_star: f64,
    pub policy: AffinePolicy,
    pub placement: Placement,
    pub feasible: bool,
    /// γ₁ bisection steps after the two bracket checks.
    pub bisection_iterations: usize,
    pub lp_solves: usize,
    pub probes: Vec<Probe>,
    pub counts: ProgramCounts,
}

impl FlexibilityAssessment {
    pub fn h(&self) -> usize {
        self.placement.len
    }

    pub fn to_json(&self, window_start_step: usize) -> serde_json::Value {
        serde_json::json!({
            "gamma1_star_w": self.gamma1_star,
            "gamma2_star_w_per_step": self.gamma2_star,
            "window_start_step": window_start_step,
            "h": self.h(),
            "feasible": self.feasible,
            "lp_solves": self.lp_solves,
        })
    }
}

/// Number of halvings needed to shrink `[0, γ_max]` below `tol`.
pub fn bisection_iteration_bound(gamma_max: f64, tol: f64) -> usize {
    if gamma_max <= tol {
        0
    } else {
        (gamma_max / tol).log2().ceil() as usize
    }
}

struct Prober<'a> {
    problem: &'a RobustProblem,
    options: &'a AssessmentOptions,
    reform_options: ReformulationOptions,
    probes: Vec<Probe>,
    seed_solves: usize,
    counts: Option<ProgramCounts>,
}

impl<'a> Prober<'a> {
    fn new(problem: &'a RobustProblem, options: &'a AssessmentOptions) -> Self {
        let reform_options = ReformulationOptions {
            causal_k: options.causal_k,
            fixed_p: options.fixed_p.as_ref().map(|f| f.for_window(problem)),
            fault: options.fault,
        };
        Self { problem, options, reform_options, probes: Vec::new(), seed_solves: 0, counts: None }
    }

    /// Certified policy at `(γ₁, γ₂)`, or `None` when the reformulation is infeasible.
    fn probe(&mut self, gamma1: f64, gamma2: f64) -> Result<Option<AffinePolicy>> {
        if self.counts.is_none() {
            let full = assemble_reformulation(self.problem, gamma1, gamma2, &self.reform_options)?;
            self.counts = Some(full.counts);
        }
        let program = assemble_compact(self.problem, GammaMode::Fixed { gamma1, gamma2 }, &self.reform_options)?;
        let outcome = match solve_lp_with(&program.lp, &self.options.solver) {
            Ok(sol) => match sol.status {
                LpStatus::Optimal => {
                    let fixed = self.reform_options.fixed_p.as_ref();
                    let mut policy = program.policy(&sol.primal, self.problem.channels(), fixed)?;
                    snap_forced_zeros(&mut policy, self.problem);
                    Some(policy)
                }
                LpStatus::Infeasible => None,
                LpStatus::Unbounded => {
                    return Err(Error::Numerical("feasibility program reported unbounded".into()));
                }
            },
            // A stalled solve away from γ = 0 is treated as a rejection, which can only
            // make the reported capacity more conservative.
            Err(Error::Numerical(_)) if gamma1 > 0.0 => None,
            Err(e) => return Err(e),
        };
        self.probes.push(Probe { gamma1, gamma2, feasible: outcome.is_some() });
        Ok(outcome)
    }

    /// Largest γ₁ of the homogenized program with `γ₂ = βγ₁`, if it solves cleanly.
    fn seed(&mut self, beta: f64, gamma_max: f64) -> Result<Option<f64>> {
        self.seed_solves += 1;
        let program = assemble_compact(self.problem, GammaMode::Homogenized { beta, max: gamma_max }, &self.reform_options)?;
        match solve_lp_with(&program.lp, &self.options.solver) {
            Ok(sol) if sol.status == LpStatus::Optimal => Ok(program.gamma1_var.map(|g| sol.primal[g])),
            Ok(_) | Err(Error::Numerical(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Steps without PV force `u_t = 0` for every uncertainty realization, so the whole
/// policy row is zero there; the solver only gets it to round-off.
fn snap_forced_zeros(policy: &mut AffinePolicy, problem: &RobustProblem) {
    for (t, &pv) in problem.constraints.pv_upper.iter().enumerate() {
        if pv == 0.0 {
            policy.v[t] = 0.0;
            policy.k.row_mut(t).fill(0.0);
            policy.p.row_mut(t).fill(0.0);
        }
    }
}

/// Largest `γ₁` (within the tolerance) for which a certified affine policy exists.
///
/// Checks `γ = 0` first (no capacity when even that fails), then the top of the
/// bracket, then bisects. With `seed_bracket`, a homogenized program narrows the
/// bracket first. The policy returned is the one certified at the reported γ.
pub fn assess_flexibility(problem: &RobustProblem, options: &AssessmentOptions) -> Result<FlexibilityAssessment> {
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidArgument("bisection tolerance must be positive".into()));
    }
    let gamma_max = options.gamma1_max.unwrap_or(problem.constraints.total_power_cap);
    let mut prober = Prober::new(problem, options);
    let finish = |prober: Prober, g1: f64, g2: f64, policy: AffinePolicy, feasible: bool, iters: usize| {
        let lp_solves = prober.probes.len() + prober.seed_solves;
        FlexibilityAssessment {
            gamma1_star: g1,
            gamma2_star: g2,
            policy,
            placement: problem.placement,
            feasible,
            bisection_iterations: iters,
            lp_solves,
            probes: prober.probes,
            counts: prober.counts.expect("at least one probe ran"),
        }
    };

    let Some(mut best) = prober.probe(0.0, options.gamma2.gamma2(0.0))? else {
        let zero = AffinePolicy::zero(problem.horizon(), problem.h(), problem.channels());
        return Ok(finish(prober, 0.0, 0.0, zero, false, 0));
    };
    let (mut lo, mut hi) = (0.0, gamma_max);
    let mut hi_rejected = false;
    let mut iterations = 0;
    let ratio = match options.gamma2 {
        Gamma2Policy::Ratio(beta) | Gamma2Policy::RatioThenAscent(beta) => Some(beta),
        Gamma2Policy::Fixed(_) => None,
    };
    if let (true, Some(beta)) = (options.seed_bracket, ratio) {
        if let Some(seed) = prober.seed(beta, gamma_max)? {
            // Probe half a tolerance either side of the seed; whatever they return,
            // the bracket below stays valid.
            let below = (seed - 0.5 * options.tolerance).max(0.0);
            let above = seed + 0.5 * options.tolerance;
            let below_ok = below == 0.0
                || match prober.probe(below, beta * below)? {
                    Some(policy) => {
                        best = policy;
                        lo = below;
                        true
                    }
                    None => {
                        hi = below;
                        hi_rejected = true;
                        false
                    }
                };
            if below_ok && above < gamma_max {
                match prober.probe(above, beta * above)? {
                    Some(policy) => {
                        best = policy;
                        lo = above;
                    }
                    None => {
                        hi = above;
                        hi_rejected = true;
                    }
                }
            }
        }
    }
    if !hi_rejected {
        match prober.probe(hi, options.gamma2.gamma2(hi))? {
            Some(policy) => {
                best = policy;
                lo = hi;
            }
            None => hi_rejected = true,
        }
    }
    debug_assert!(hi_rejected || lo == hi);
    while hi - lo > options.tolerance {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        match prober.probe(mid, options.gamma2.gamma2(mid))? {
            Some(policy) => {
                best = policy;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    let mut gamma2 = options.gamma2.gamma2(lo);

    if let Gamma2Policy::RatioThenAscent(_) = options.gamma2 {
        // Ramp limits above γ₁ never bind, so γ₁ caps the ascent.
        let (mut g_lo, mut g_hi) = (gamma2, lo);
        if g_hi > g_lo {
            if let Some(policy) = prober.probe(lo, g_hi)? {
                best = policy;
                g_lo = g_hi;
            } else {
                while g_hi - g_lo > options.tolerance {
                    let mid = 0.5 * (g_lo + g_hi);
                    match prober.probe(lo, mid)? {
                        Some(policy) => {
                            best = policy;
                            g_lo = mid;
                        }
                        None => g_hi = mid,
                    }
                }
            }
        }
        gamma2 = g_lo;
    }

    Ok(finish(prober, lo, gamma2, best, true, iterations))
}

/// Outcome of re-evaluating a certified policy against the primal worst case.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub ok: bool,
    pub max_violation: f64,
    pub worst_row: Option<(RowGroup, usize)>,
    pub row_values: Vec<RowValue>,
}

pub fn verify_robust_feasibility(assessment: &FlexibilityAssessment, problem: &RobustProblem) -> Result<Verification> {
    verify_policy(&assessment.policy, problem, assessment.gamma1_star, assessment.gamma2_star)
}

/// Robust feasibility of an arbitrary policy at `(γ₁, γ₂)`.
pub fn verify_policy(policy: &AffinePolicy, problem: &RobustProblem, gamma1: f64, gamma2: f64) -> Result<Verification> {
    let flex = build_flexibility_polytope(gamma1, gamma2, problem.h())?;
    let values = worst_case_row_values(policy, problem, &flex)?;
    let rows = problem.rows();
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_row = None;
    for (row, value) in rows.iter().zip(&values) {
        let total = row.lp_scale() * value.total();
        if total > max_violation {
            max_violation = total;
            worst_row = Some((row.group, row.index));
        }
    }
    Ok(Verification { ok: max_violation <= VERIFY_TOL, max_violation, worst_row, row_values: values })
}

/// Offline disturbance feedback for fixed-`P` assessments.
///
/// Solves one program at `γ = 0` on a reference window, over `P`, the 𝒟̃ duals and a
/// nominal plan, minimizing the weighted sum of the rows' 𝒟̃ backoffs (comfort rows
/// in °C with weight 1, power rows in W with weight 1e-4).
pub fn precompute_disturbance_policy(reference: &RobustProblem, solver: &SolverOptions) -> Result<FixedDisturbancePolicy> {
    let channels = reference.channels();
    let n_steps = reference.horizon();
    if reference.uncertainty.is_zero() {
        return Ok(FixedDisturbancePolicy { p: DMatrix::zeros(n_steps, channels * n_steps), channels });
    }
    let mut reform = assemble_reformulation(reference, 0.0, 0.0, &ReformulationOptions::default())?;
    let delta = reference.uncertainty.upper();
    let pn = delta.len();
    for (r, row) in reform.rows.iter().enumerate() {
        let weight = match row.group {
            RowGroup::State => 1.0,
            // Scaled rows are in kW: 1e-4 per W is 0.1 per kW.
            RowGroup::Input | RowGroup::Mixed => 0.1,
        };
        let y2 = reform.layout.y2[r].expect("full P block");
        for c in 0..pn {
            reform.lp.objective[y2 + c] = weight * delta[c];
            reform.lp.objective[y2 + pn + c] = weight * delta[c];
        }
    }
    let sol = solve_lp_with(&reform.lp, solver)?;
    match sol.status {
        LpStatus::Optimal => {
            let mut policy = reform.policy(&sol.primal, channels, None)?;
            snap_forced_zeros(&mut policy, reference);
            Ok(FixedDisturbancePolicy { p: policy.p, channels })
        }
        LpStatus::Infeasible => Err(Error::InfeasibleNominal(
            "no disturbance feedback keeps the reference window feasible".into(),
        )),
        LpStatus::Unbounded => Err(Error::Numerical("backoff program reported unbounded".into())),
    }
}
