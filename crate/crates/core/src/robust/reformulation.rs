use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{k_entry_is_causal, p_entry_is_free, AffinePolicy, ConstraintRow, RobustProblem};
use crate::constraints::build_flexibility_polytope;
use crate::error::{Error, Result};
use crate::lp::LinearProgram;

/// Mutations used to check that the verification suite catches a broken reformulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultInjection {
    /// Negates the policy side of the 𝒲-dual equalities of one constraint row.
    FlipFlexEqualitySign { row: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReformulationOptions {
    /// Restrict `K[t, s]` to request entries scheduled at or before step `t`.
    pub causal_k: bool,
    /// When set, `P` is a constant and each row carries its exact 𝒟̃ backoff instead of
    /// the `(P, y₂)` variables and their equalities.
    pub fixed_p: Option<DMatrix<f64>>,
    pub fault: Option<FaultInjection>,
}

/// Sizes of the assembled program. "Nominal" variables are the policy blocks `(v, K, P)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramCounts {
    pub horizon: usize,
    pub h: usize,
    pub l_x: usize,
    pub l_u: usize,
    pub l_uw: usize,
    pub l_w: usize,
    pub l_d: usize,
    pub nominal_vars: usize,
    pub dual_vars: usize,
    pub eq_rows: usize,
    pub ineq_rows: usize,
    /// Equalities pinning the structurally zero entries of `P` (and of `K` when causal).
    pub structure_rows: usize,
}

impl ProgramCounts {
    pub fn total_vars(&self) -> usize {
        self.nominal_vars + self.dual_vars
    }

    pub fn total_rows(&self) -> usize {
        self.eq_rows + self.ineq_rows
    }

    /// `(4h−2)·(l_x+l_u+l_uw) + l_d·(l_x+l_u+l_uw)`.
    pub fn dual_increase_formula(&self) -> usize {
        (4 * self.h - 2 + self.l_d) * (self.l_x + self.l_u + self.l_uw)
    }
}

/// Column offsets of the variable blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub horizon: usize,
    pub h: usize,
    pub pn: usize,
    pub v: usize,
    pub k: usize,
    pub p: Option<usize>,
    /// Start of `y₁` for each row.
    pub y1: Vec<usize>,
    /// Start of `y₂` for each row, absent with a fixed `P`.
    pub y2: Vec<Option<usize>>,
    pub l_w: usize,
    pub l_d: usize,
}

impl Layout {
    pub fn k_index(&self, t: usize, s: usize) -> usize {
        self.k + t * self.h + s
    }

    pub fn p_index(&self, t: usize, c: usize) -> Option<usize> {
        self.p.map(|p| p + t * self.pn + c)
    }
}

#[derive(Debug, Clone)]
pub struct Reformulation {
    pub lp: LinearProgram,
    pub layout: Layout,
    pub counts: ProgramCounts,
    pub rows: Vec<ConstraintRow>,
    /// Index of each row's main inequality in the LP.
    pub main_rows: Vec<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Reformulation {
    /// Reads `(v, K, P)` back from a primal solution.
    pub fn policy(&self, primal: &[f64], channels: usize, fixed_p: Option<&DMatrix<f64>>) -> Result<AffinePolicy> {
        let l = &self.layout;
        let v = DVector::from_fn(l.horizon, |t, _| primal[l.v + t]);
        let k = DMatrix::from_fn(l.horizon, l.h, |t, s| primal[l.k_index(t, s)]);
        let p = match (fixed_p, l.p) {
            (Some(p), _) => p.clone(),
            (None, Some(_)) => DMatrix::from_fn(l.horizon, l.pn, |t, c| {
                // Structural zeros are pinned by equalities; drop solver round-off.
                if p_entry_is_free(t, c, channels) {
                    primal[l.p_index(t, c).unwrap()]
                } else {
                    0.0
                }
            }),
            (None, None) => return Err(Error::InvalidArgument("program has no P block and none was supplied".into())),
        };
        AffinePolicy::new(v, k, p, channels)
    }

    /// `bilinear_terms` annotation for the JSON dump: every `g_w` entry that multiplies
    /// a dual variable is affine in `(γ₁, γ₂)`, listed per variable.
    pub fn bilinear_terms(&self) -> serde_json::Value {
        let flex = build_flexibility_polytope(1.0, 1.0, self.layout.h).expect("valid window");
        let (a, b) = flex.offset_pattern();
        let mut terms = Vec::new();
        for (r, &start) in self.layout.y1.iter().enumerate() {
            for i in 0..self.layout.l_w {
                if a[i] != 0.0 || b[i] != 0.0 {
                    terms.push(serde_json::json!({
                        "ineq_row": self.main_rows[r],
                        "var": start + i,
                        "gamma1_coeff": a[i],
                        "gamma2_coeff": b[i],
                    }));
                }
            }
        }
        serde_json::json!({
            "description": "coefficient of var in ineq_row equals gamma1_coeff*gamma1 + gamma2_coeff*gamma2",
            "gamma1": self.gamma1,
            "gamma2": self.gamma2,
            "terms": terms,
        })
    }
}

/// Builds the dual reformulation at fixed `(γ₁, γ₂)`.
///
/// Per constraint row `r` (scaled by `σ_r`): one inequality
/// `σ offset + σ svᵀv + g_wᵀy₁ + g_dᵀy₂ ≤ 0`, the equalities
/// `H_wᵀy₁ = σ(Kᵀsv + Mᵀsw)` and `H_dᵀy₂ = σ(Pᵀsv + sd)`, and `y₁, y₂ ≥ 0`.
/// Strictly-lower structure of `P` is imposed as equality-to-zero rows.
pub fn assemble_reformulation(
    problem: &RobustProblem,
    gamma1: f64,
    gamma2: f64,
    options: &ReformulationOptions,
) -> Result<Reformulation> {
    let flex = build_flexibility_polytope(gamma1, gamma2, problem.h())?;
    let n_steps = problem.horizon();
    let h = problem.h();
    let channels = problem.channels();
    let pn = channels * n_steps;
    let rows = problem.rows();
    let l_w = flex.num_rows();
    let l_d = problem.uncertainty.num_rows();
    let fixed = options.fixed_p.as_ref();
    if let Some(p) = fixed {
        if p.nrows() != n_steps || p.ncols() != pn {
            return Err(Error::DimensionMismatch(format!("fixed P is {}x{}, expected {n_steps}x{pn}", p.nrows(), p.ncols())));
        }
    }

    let v_off = 0;
    let k_off = n_steps;
    let mut next = k_off + n_steps * h;
    let p_off = if fixed.is_none() {
        let off = next;
        next += n_steps * pn;
        Some(off)
    } else {
        None
    };
    let nominal_vars = next;
    let mut y1 = Vec::with_capacity(rows.len());
    let mut y2 = Vec::with_capacity(rows.len());
    for _ in &rows {
        y1.push(next);
        next += l_w;
        if fixed.is_none() {
            y2.push(Some(next));
            next += l_d;
        } else {
            y2.push(None);
        }
    }
    let layout = Layout { horizon: n_steps, h, pn, v: v_off, k: k_off, p: p_off, y1, y2, l_w, l_d };

    let mut lp = LinearProgram::new(next);
    for j in nominal_vars..next {
        lp.set_bounds(j, 0.0, f64::INFINITY);
    }

    let hw = &flex.polytope.h;
    let gw = &flex.polytope.g;
    let delta_d = problem.uncertainty.upper();
    let mut main_rows = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let sigma = row.lp_scale();
        let nz_sv: Vec<(usize, f64)> = row.sv.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(t, v)| (t, *v)).collect();

        let mut main: Vec<(usize, f64)> = nz_sv.iter().map(|&(t, s)| (layout.v + t, sigma * s)).collect();
        for i in 0..l_w {
            if gw[i] != 0.0 {
                main.push((layout.y1[r] + i, gw[i]));
            }
        }
        let mut rhs = -sigma * row.offset;
        match (layout.y2[r], fixed) {
            (Some(y2), _) => {
                for c in 0..pn {
                    if delta_d[c] != 0.0 {
                        main.push((y2 + c, delta_d[c]));
                        main.push((y2 + pn + c, delta_d[c]));
                    }
                }
            }
            (None, Some(p)) => {
                let b = p.tr_mul(&row.sv) + &row.sd;
                rhs -= sigma * problem.uncertainty.support(b.as_slice());
            }
            (None, None) => unreachable!("y2 is absent only with a fixed P"),
        }
        main_rows.push(lp.add_ineq(&main, rhs));

        let flip = matches!(options.fault, Some(FaultInjection::FlipFlexEqualitySign { row: fr }) if fr == r);
        let side = if flip { -1.0 } else { 1.0 };
        for s in 0..h {
            let mut eq: Vec<(usize, f64)> = (0..l_w)
                .filter(|&i| hw[(i, s)] != 0.0)
                .map(|i| (layout.y1[r] + i, hw[(i, s)]))
                .collect();
            for &(t, sv) in &nz_sv {
                if !options.causal_k || k_entry_is_causal(t, s, &problem.placement) {
                    eq.push((layout.k_index(t, s), -side * sigma * sv));
                }
            }
            lp.add_eq(&eq, side * sigma * row.sw[problem.placement.start + s]);
        }

        if let Some(y2) = layout.y2[r] {
            for c in 0..pn {
                let mut eq = vec![(y2 + c, 1.0), (y2 + pn + c, -1.0)];
                for &(t, sv) in &nz_sv {
                    eq.push((layout.p_index(t, c).unwrap(), -sigma * sv));
                }
                lp.add_eq(&eq, sigma * row.sd[c]);
            }
        }
    }

    let mut structure_rows = 0;
    if layout.p.is_some() {
        for t in 0..n_steps {
            for c in 0..pn {
                if !p_entry_is_free(t, c, channels) {
                    lp.add_eq(&[(layout.p_index(t, c).unwrap(), 1.0)], 0.0);
                    structure_rows += 1;
                }
            }
        }
    }
    if options.causal_k {
        for t in 0..n_steps {
            for s in 0..h {
                if !k_entry_is_causal(t, s, &problem.placement) {
                    lp.add_eq(&[(layout.k_index(t, s), 1.0)], 0.0);
                    structure_rows += 1;
                }
            }
        }
    }

    let c = &problem.constraints;
    let counts = ProgramCounts {
        horizon: n_steps,
        h,
        l_x: c.num_state_rows(),
        l_u: c.num_input_rows(),
        l_uw: c.num_mixed_rows(),
        l_w,
        l_d,
        nominal_vars,
        dual_vars: next - nominal_vars,
        eq_rows: lp.num_eq(),
        ineq_rows: lp.num_ineq(),
        structure_rows,
    };
    Ok(Reformulation { lp, layout, counts, rows, main_rows, gamma1, gamma2 })
}
