//! Brute-force cross-checks for the dual reformulation.
//!
//! The vertex oracle imposes every row at every vertex of 𝒲 × 𝒟̃ in epigraph form.
//! Both inner maxima are separable (one over 𝒲, one over 𝒟̃), so
//! `t_w ≥ aᵀw̃_v` for all 𝒲-vertices and `t_d ≥ bᵀd̃_u` for all 𝒟̃-vertices is the same
//! as imposing the row at every vertex of the product set.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};

use super::reformulation::{assemble_reformulation, FaultInjection, ReformulationOptions};
use super::{dualize_row, k_entry_is_causal, p_entry_is_free, solve_dual_value, worst_case_row_values, AffinePolicy, Gamma2Policy, RobustProblem};
use crate::constraints::{
    build_flexibility_polytope, build_operating_constraints, build_placement, DisturbanceUncertainty,
};
use crate::error::{Error, Result};
use crate::lp::{enumerate_box_vertices, enumerate_polytope_vertices, solve_lp, LinearProgram, LpStatus};
use crate::thermal::{lift_dynamics, ThermalModel};

/// Policy-existence program over `(v, K, P, t_w, t_d)` with one constraint per row and vertex.
pub fn vertex_policy_lp(problem: &RobustProblem, gamma1: f64, gamma2: f64, causal_k: bool) -> Result<LinearProgram> {
    let flex = build_flexibility_polytope(gamma1, gamma2, problem.h())?;
    let w_vertices = enumerate_polytope_vertices(&flex.polytope, 1e-9)?;
    let d_vertices = enumerate_box_vertices(&problem.uncertainty.lower(), &problem.uncertainty.upper())?;
    let n_steps = problem.horizon();
    let h = problem.h();
    let channels = problem.channels();
    let pn = n_steps * channels;
    let rows = problem.rows();

    let v_off = 0;
    let k_off = n_steps;
    let p_off = k_off + n_steps * h;
    let t_off = p_off + n_steps * pn;
    let num_vars = t_off + 2 * rows.len();
    let mut lp = LinearProgram::new(num_vars);
    for t in 0..n_steps {
        for c in 0..pn {
            if !p_entry_is_free(t, c, channels) {
                lp.set_bounds(p_off + t * pn + c, 0.0, 0.0);
            }
        }
        if causal_k {
            for s in 0..h {
                if !k_entry_is_causal(t, s, &problem.placement) {
                    lp.set_bounds(k_off + t * h + s, 0.0, 0.0);
                }
            }
        }
    }

    for (r, row) in rows.iter().enumerate() {
        let (tw, td) = (t_off + 2 * r, t_off + 2 * r + 1);
        let nz: Vec<(usize, f64)> = row.sv.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(t, v)| (t, *v)).collect();
        let mut main: Vec<(usize, f64)> = nz.iter().map(|&(t, s)| (v_off + t, s)).collect();
        main.push((tw, 1.0));
        main.push((td, 1.0));
        lp.add_ineq(&main, -row.offset);

        for wv in &w_vertices {
            // aᵀw̃ = Σ_s (Σ_t sv_t K[t,s]) w̃_s + Σ_s sw_{start+s} w̃_s
            let mut entries = vec![(tw, -1.0)];
            let mut constant = 0.0;
            for s in 0..h {
                if wv[s] == 0.0 {
                    continue;
                }
                for &(t, sv) in &nz {
                    entries.push((k_off + t * h + s, sv * wv[s]));
                }
                constant += row.sw[problem.placement.start + s] * wv[s];
            }
            lp.add_ineq(&entries, -constant);
        }
        for dv in &d_vertices {
            let mut entries = vec![(td, -1.0)];
            let mut constant = 0.0;
            for c in 0..pn {
                if dv[c] == 0.0 {
                    continue;
                }
                for &(t, sv) in &nz {
                    if p_entry_is_free(t, c, channels) {
                        entries.push((p_off + t * pn + c, sv * dv[c]));
                    }
                }
                constant += row.sd[c] * dv[c];
            }
            lp.add_ineq(&entries, -constant);
        }
    }
    Ok(lp)
}

pub fn vertex_feasible(problem: &RobustProblem, gamma1: f64, gamma2: f64, causal_k: bool) -> Result<bool> {
    let lp = vertex_policy_lp(problem, gamma1, gamma2, causal_k)?;
    Ok(solve_lp(&lp)?.status == LpStatus::Optimal)
}

/// Largest `γ₁` on the integer grid (W) accepted by the vertex oracle, scanning a
/// coarse grid first and then every watt above the last accepted coarse point.
/// `None` when even `γ = 0` is rejected.
pub fn grid_search_gamma1(
    problem: &RobustProblem,
    gamma2: Gamma2Policy,
    gamma1_max: f64,
    coarse_step: usize,
    causal_k: bool,
) -> Result<Option<f64>> {
    let top = gamma1_max.floor() as usize;
    let feasible = |g: usize| vertex_feasible(problem, g as f64, gamma2.gamma2(g as f64), causal_k);
    let mut best = None;
    for g in (0..=top).step_by(coarse_step.max(1)) {
        if feasible(g)? {
            best = Some(g);
        }
    }
    let Some(coarse) = best else {
        return Ok(None);
    };
    let mut fine = coarse;
    for g in coarse + 1..(coarse + coarse_step).min(top + 1) {
        if feasible(g)? {
            fine = g;
        }
    }
    Ok(Some(fine as f64))
}

/// Plain deterministic feasibility program over `𝐮` for the nominal window.
pub fn nominal_feasibility_lp(problem: &RobustProblem) -> LinearProgram {
    let l = &problem.lifted;
    let c = &problem.constraints;
    let n_steps = problem.horizon();
    let mut lp = LinearProgram::new(n_steps);
    let base = &l.f_x * &problem.x0 + &l.f_w * &problem.w_bar + &l.f_d * &problem.d_hat;
    for k in 0..n_steps {
        let rr = l.room_row(k);
        let row: Vec<(usize, f64)> = (0..=k).map(|j| (j, l.f_u[(rr, j)])).collect();
        let neg: Vec<(usize, f64)> = row.iter().map(|&(j, v)| (j, -v)).collect();
        lp.add_ineq(&row, c.comfort_upper - base[rr]);
        lp.add_ineq(&neg, base[rr] - c.comfort_lower);
        lp.add_ineq(&[(k, 1.0)], c.total_power_cap - problem.w_bar[k]);
        lp.add_ineq(&[(k, -1.0)], problem.w_bar[k]);
        lp.set_bounds(k, 0.0, c.pv_upper[k]);
    }
    lp
}

/// Random policy with the nonanticipative `P` structure.
pub fn random_policy<R: Rng>(rng: &mut R, problem: &RobustProblem) -> AffinePolicy {
    let (n, h, p) = (problem.horizon(), problem.h(), problem.channels());
    let v = DVector::from_fn(n, |_, _| rng.gen_range(0.0..800.0));
    let k = DMatrix::from_fn(n, h, |_, _| rng.gen_range(-1.0..1.0));
    let pm = DMatrix::from_fn(n, n * p, |t, c| if p_entry_is_free(t, c, p) { rng.gen_range(-20.0..20.0) } else { 0.0 });
    AffinePolicy::new(v, k, pm, p).expect("structure is nonanticipative")
}

/// Largest relative gap between each row's dual optimum and its primal worst case.
pub fn duality_gap(problem: &RobustProblem, policy: &AffinePolicy, gamma1: f64, gamma2: f64) -> Result<f64> {
    let flex = build_flexibility_polytope(gamma1, gamma2, problem.h())?;
    let values = worst_case_row_values(policy, problem, &flex)?;
    let d_poly = problem.uncertainty.polytope();
    let mut worst = 0.0f64;
    for (row, value) in problem.rows().iter().zip(&values) {
        let pair = dualize_row(&row.flex_coeffs(policy, &problem.placement), &row.dist_coeffs(policy), &flex.polytope, &d_poly);
        let dual = row.nominal(policy) + solve_dual_value(&pair.flex)? + solve_dual_value(&pair.dist)?;
        worst = worst.max((dual - value.total()).abs() / (1.0 + value.total().abs()));
    }
    Ok(worst)
}

fn reformulation_feasible(problem: &RobustProblem, gamma1: f64, gamma2: f64, fault: Option<FaultInjection>) -> Result<bool> {
    let options = ReformulationOptions { fault, ..Default::default() };
    let reform = assemble_reformulation(problem, gamma1, gamma2, &options)?;
    Ok(solve_lp(&reform.lp)?.status == LpStatus::Optimal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCheck {
    pub index: usize,
    pub max_duality_gap: f64,
    pub duality_ok: bool,
    /// Feasibility verdicts of the reformulation and of the vertex program agree.
    pub oracle_ok: bool,
    /// Shrinking 𝒲 or 𝒟̃ never turns a feasible verdict infeasible.
    pub monotone_ok: bool,
}

impl InstanceCheck {
    pub fn passed(&self) -> bool {
        self.duality_ok && self.oracle_ok && self.monotone_ok
    }
}

/// Randomized cross-checks of the reformulation on small instances.
pub fn verification_suite(instances: usize, seed: u64, fault: Option<FaultInjection>) -> Result<Vec<InstanceCheck>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(instances);
    for index in 0..instances {
        let problem = random_instance(&mut rng, &InstanceSpec::default())?;
        let policy = random_policy(&mut rng, &problem);
        let (g1, g2) = (rng.gen_range(0.0..800.0), rng.gen_range(0.0..200.0));
        let max_duality_gap = duality_gap(&problem, &policy, g1, g2)?;

        let mut oracle_ok = true;
        let mut monotone_ok = true;
        for _ in 0..3 {
            let (g1, g2) = (rng.gen_range(0.0..1200.0), rng.gen_range(0.0..300.0));
            let dual = reformulation_feasible(&problem, g1, g2, fault)?;
            oracle_ok &= dual == vertex_feasible(&problem, g1, g2, false)?;
            if dual {
                monotone_ok &= reformulation_feasible(&problem, 0.5 * g1, 0.5 * g2, fault)?;
                let mut calmer = problem.clone();
                calmer.uncertainty.delta.iter_mut().for_each(|d| *d *= 0.5);
                monotone_ok &= reformulation_feasible(&calmer, g1, g2, fault)?;
            }
        }
        // Random probes rarely land where a single broken row matters, so also probe
        // just inside and just outside the oracle's own boundary.
        if let Some(edge) = vertex_edge(&problem)? {
            for g1 in [0.95 * edge, 1.05 * edge + 1.0] {
                let g2 = Gamma2Policy::default().gamma2(g1);
                oracle_ok &= reformulation_feasible(&problem, g1, g2, fault)? == vertex_feasible(&problem, g1, g2, false)?;
            }
        }
        out.push(InstanceCheck { index, max_duality_gap, duality_ok: max_duality_gap <= 1e-6, oracle_ok, monotone_ok });
    }
    Ok(out)
}

/// Largest `γ₁` the vertex oracle accepts under the default `γ₂` ratio, to within 1 W.
fn vertex_edge(problem: &RobustProblem) -> Result<Option<f64>> {
    let ratio = Gamma2Policy::default();
    let feasible = |g: f64| vertex_feasible(problem, g, ratio.gamma2(g), false);
    if !feasible(0.0)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, 4000.0);
    if feasible(hi)? {
        return Ok(None);
    }
    while hi - lo > 1.0 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(lo))
}

/// Size limits for randomized small instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub max_n: usize,
    pub max_horizon: usize,
    pub max_h: usize,
    pub max_channels: usize,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self { max_n: 2, max_horizon: 6, max_h: 3, max_channels: 2 }
    }
}

/// Random small window problem with building-like magnitudes.
pub fn random_instance<R: Rng>(rng: &mut R, spec: &InstanceSpec) -> Result<RobustProblem> {
    let n = rng.gen_range(1..=spec.max_n);
    let n_steps = rng.gen_range(1..=spec.max_horizon);
    let h = rng.gen_range(1..=spec.max_h.min(n_steps));
    let channels = rng.gen_range(1..=spec.max_channels);
    let max_pn = if channels * n_steps > 8 { 8 / channels } else { n_steps };
    let n_steps = n_steps.min(max_pn).max(h);

    let model = random_building_model(rng, n, channels)?;
    let lifted = lift_dynamics(&model, n_steps)?;
    let pv: Vec<f64> = (0..n_steps).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1200.0) }).collect();
    let cap = rng.gen_range(1200.0..2500.0);
    let constraints = build_operating_constraints((19.0, 24.0), &pv, cap, n, 0)?;
    let mut delta = vec![rng.gen_range(0.0..1.5)];
    if channels > 1 {
        delta.push(rng.gen_range(0.0..60.0));
    }
    let uncertainty = DisturbanceUncertainty::new(delta, n_steps)?;
    let start = rng.gen_range(0..=n_steps - h);
    let placement = build_placement(n_steps, start, h)?;
    let room = rng.gen_range(19.6..23.0);
    let ambient = rng.gen_range(-2.0..12.0);
    let sun = rng.gen_range(0.0..500.0);
    let w_ss = model.steady_grid_power(room, &[ambient, sun][..channels]).clamp(0.0, cap);
    let x0 = model.steady_state(0.0, w_ss, &[ambient, sun][..channels]);
    let mut x0 = x0;
    x0[0] = room;
    let w_bar = DVector::from_fn(n_steps, |_, _| (w_ss + rng.gen_range(-400.0..400.0)).clamp(0.0, cap));
    let d_hat = DVector::from_fn(channels * n_steps, |c, _| {
        if c % channels == 0 {
            ambient + rng.gen_range(-1.0..1.0)
        } else {
            (sun + rng.gen_range(-100.0..100.0)).max(0.0)
        }
    });
    RobustProblem::new(lifted, constraints, uncertainty, placement, x0, w_bar, d_hat)
}

fn random_building_model<R: Rng>(rng: &mut R, n: usize, channels: usize) -> Result<ThermalModel> {
    for _ in 0..100 {
        let a_room: f64 = rng.gen_range(0.80..0.97);
        let gain = rng.gen_range(1.5e-4..6e-4);
        let loss: f64 = (1.0 - a_room) * rng.gen_range(0.2..0.6);
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, 1);
        let mut d = DMatrix::zeros(n, channels);
        a[(0, 0)] = a_room;
        b[(0, 0)] = gain;
        d[(0, 0)] = loss;
        if channels > 1 {
            d[(0, 1)] = rng.gen_range(0.0..2e-4);
        }
        if n > 1 {
            // Envelope node exchanging heat with the room.
            let coupling = (1.0 - a_room) - loss;
            a[(0, 1)] = coupling.max(0.0);
            a[(1, 0)] = rng.gen_range(0.005..0.03);
            a[(1, 1)] = 1.0 - a[(1, 0)] - rng.gen_range(0.001..0.01);
            d[(1, 0)] = 1.0 - a[(1, 0)] - a[(1, 1)];
        }
        match ThermalModel::new(a, b.clone(), b, d, 300.0, 3.0, 0) {
            Ok(m) => return Ok(m),
            Err(Error::Unstable(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical("could not draw a stable random model".into()))
}
