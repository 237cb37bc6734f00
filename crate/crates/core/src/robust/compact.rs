//! Leaner program with the same feasible `(v, K, P)` set as the row-wise dual
//! reformulation, used for the bisection probes.
//!
//! Exact simplifications:
//! - the 𝒲 duals of the upper bounds `w̃ ≤ 0` carry no cost, so each dual equality
//!   becomes an inequality once they are eliminated;
//! - the 𝒟̃ support of a box is `Σ δ|b|`, written with one epigraph variable per
//!   entry and shared by every row whose `b` agrees up to sign;
//! - rows whose 𝒲 coefficients agree up to sign share one materialized response.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::reformulation::{FaultInjection, ReformulationOptions};
use super::{k_entry_is_causal, p_entry_is_free, AffinePolicy, RobustProblem};
use crate::constraints::build_flexibility_polytope;
use crate::error::{Error, Result};
use crate::lp::LinearProgram;

/// How the program treats `(γ₁, γ₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum GammaMode {
    /// Fixed values: a feasibility program.
    Fixed { gamma1: f64, gamma2: f64 },
    /// `γ₂ = βγ₁` with `γ₁ ∈ [0, max]` a variable to maximize. With `K' = γ₁K` and
    /// every 𝒲 dual scaled by `γ₁`, the program is linear and exact for `γ₁ > 0`.
    Homogenized { beta: f64, max: f64 },
}

pub(crate) struct CompactProgram {
    pub lp: LinearProgram,
    /// Column of `γ₁` in homogenized mode.
    pub gamma1_var: Option<usize>,
    horizon: usize,
    h: usize,
    pn: usize,
    k_vars: Vec<Option<usize>>,
    p_vars: Vec<Option<usize>>,
}

impl CompactProgram {
    pub fn policy(&self, primal: &[f64], channels: usize, fixed_p: Option<&DMatrix<f64>>) -> Result<AffinePolicy> {
        let read = |var: Option<usize>| var.map_or(0.0, |j| primal[j]);
        let v = DVector::from_column_slice(&primal[..self.horizon]);
        let unscale = match self.gamma1_var {
            Some(g) if primal[g] > 0.0 => 1.0 / primal[g],
            Some(_) => 0.0,
            None => 1.0,
        };
        let k = DMatrix::from_fn(self.horizon, self.h, |t, s| unscale * read(self.k_vars[t * self.h + s]));
        let p = match fixed_p {
            Some(p) => p.clone(),
            None => DMatrix::from_fn(self.horizon, self.pn, |t, c| read(self.p_vars[t * self.pn + c])),
        };
        AffinePolicy::new(v, k, p, channels)
    }
}

type Row = Vec<(usize, f64)>;

#[derive(Default)]
struct Builder {
    next: usize,
    nonneg: Vec<usize>,
    bounds: Vec<(usize, f64, f64)>,
    objective: Vec<(usize, f64)>,
    eqs: Vec<(Row, f64)>,
    ineqs: Vec<(Row, f64)>,
}

impl Builder {
    fn var(&mut self) -> usize {
        self.next += 1;
        self.next - 1
    }

    fn vars(&mut self, count: usize) -> usize {
        self.next += count;
        self.next - count
    }

    /// `e ≥ |Σ terms + constant|`; returns `e`.
    fn abs_epigraph(&mut self, terms: &[(usize, f64)], constant: f64) -> usize {
        let e = self.var();
        let mut up = terms.to_vec();
        up.push((e, -1.0));
        self.ineqs.push((up, -constant));
        let mut down: Row = terms.iter().map(|&(j, v)| (j, -v)).collect();
        down.push((e, -1.0));
        self.ineqs.push((down, constant));
        e
    }
}

/// Sign-normalized bit pattern of a coefficient vector, so that `b` and `−b` collide.
fn signature(parts: &[&DVector<f64>]) -> (Vec<u64>, f64) {
    let first = parts.iter().flat_map(|p| p.iter()).find(|x| **x != 0.0).copied().unwrap_or(1.0);
    let sign = first.signum();
    let key = parts
        .iter()
        .flat_map(|p| p.iter())
        .map(|x| if *x == 0.0 { 0 } else { (sign * x).to_bits() })
        .collect();
    (key, sign)
}

pub(crate) fn assemble_compact(
    problem: &RobustProblem,
    mode: GammaMode,
    options: &ReformulationOptions,
) -> Result<CompactProgram> {
    // Validates the window and the γ values the same way the full program does.
    let (w_cost, ramp_cost) = match mode {
        GammaMode::Fixed { gamma1, gamma2 } => {
            build_flexibility_polytope(gamma1, gamma2, problem.h())?;
            (gamma1, gamma2)
        }
        GammaMode::Homogenized { beta, max } => {
            build_flexibility_polytope(max, beta * max, problem.h())?;
            (1.0, beta)
        }
    };
    let n_steps = problem.horizon();
    let h = problem.h();
    let channels = problem.channels();
    let pn = channels * n_steps;
    let start = problem.placement.start;
    let delta = problem.uncertainty.upper();
    let fixed = options.fixed_p.as_ref();
    if let Some(p) = fixed {
        if p.nrows() != n_steps || p.ncols() != pn {
            return Err(Error::DimensionMismatch(format!("fixed P is {}x{}, expected {n_steps}x{pn}", p.nrows(), p.ncols())));
        }
    }
    let rows = problem.rows();

    let mut b = Builder { next: n_steps, ..Default::default() };
    let mut k_vars = vec![None; n_steps * h];
    for t in 0..n_steps {
        for s in 0..h {
            if !options.causal_k || k_entry_is_causal(t, s, &problem.placement) {
                k_vars[t * h + s] = Some(b.var());
            }
        }
    }
    let mut p_vars = vec![None; n_steps * pn];
    if fixed.is_none() {
        for t in 0..n_steps {
            for c in 0..pn {
                if p_entry_is_free(t, c, channels) {
                    p_vars[t * pn + c] = Some(b.var());
                }
            }
        }
    }

    let gamma1_var = match mode {
        GammaMode::Homogenized { max, .. } => {
            let g = b.var();
            b.objective.push((g, -1.0));
            b.bounds.push((g, 0.0, max));
            Some(g)
        }
        GammaMode::Fixed { .. } => None,
    };
    // A constant multiplying w̃ becomes a multiple of γ₁ in homogenized mode; the
    // returned value is what is left on the right-hand side.
    let w_constant = |row: &mut Row, value: f64| match gamma1_var {
        Some(g) => {
            if value != 0.0 {
                row.push((g, -value));
            }
            0.0
        }
        None => value,
    };

    let mut flex_groups: HashMap<Vec<u64>, Vec<(Option<(usize, f64)>, f64)>> = HashMap::new();
    let mut dist_groups: HashMap<(Vec<u64>, u64), Row> = HashMap::new();

    for (r, row) in rows.iter().enumerate() {
        let sigma = row.lp_scale();
        let mut rhs = -sigma * row.offset;
        let mut main: Row;
        // 𝒲 coefficients of this row per s: an optional (variable, coefficient) and a constant.
        let response: Vec<(Option<(usize, f64)>, f64)>;

        {
            main = (0..n_steps).filter(|&t| row.sv[t] != 0.0).map(|t| (t, sigma * row.sv[t])).collect();
            let (key, sign) = signature(&[&row.sv, &row.sw]);
            let group = flex_groups.entry(key).or_insert_with(|| {
                (0..h)
                    .map(|s| {
                        let terms: Row = (0..n_steps)
                            .filter(|&t| row.sv[t] != 0.0)
                            .filter_map(|t| k_vars[t * h + s].map(|j| (j, sign * row.sv[t])))
                            .collect();
                        let constant = sign * row.sw[start + s];
                        match terms.len() {
                            0 => (None, constant),
                            1 => (Some(terms[0]), constant),
                            _ => {
                                let z = b.var();
                                let mut eq: Row = terms.iter().map(|&(j, c)| (j, -c)).collect();
                                eq.push((z, 1.0));
                                let rhs = w_constant(&mut eq, constant);
                                b.eqs.push((eq, rhs));
                                (Some((z, 1.0)), 0.0)
                            }
                        }
                    })
                    .collect()
            });
            response = group.iter().map(|&(var, c)| (var.map(|(j, x)| (j, sign * x)), sign * c)).collect();
            if fixed.is_none() {
                // Entries without any free P term are constants of the row.
                let has_terms = |c: usize| (0..n_steps).any(|t| row.sv[t] != 0.0 && p_vars[t * pn + c].is_some());
                rhs -= sigma
                    * (0..pn)
                        .filter(|&c| delta[c] != 0.0 && !has_terms(c))
                        .map(|c| delta[c] * row.sd[c].abs())
                        .sum::<f64>();
                let (key, _) = signature(&[&row.sv, &row.sd]);
                let epi = dist_groups.entry((key, sigma.to_bits())).or_insert_with(|| {
                    let mut epi = Vec::new();
                    for c in (0..pn).filter(|&c| delta[c] != 0.0 && has_terms(c)) {
                        let terms: Row = (0..n_steps)
                            .filter(|&t| row.sv[t] != 0.0)
                            .filter_map(|t| p_vars[t * pn + c].map(|j| (j, sigma * row.sv[t])))
                            .collect();
                        epi.push((b.abs_epigraph(&terms, sigma * row.sd[c]), delta[c]));
                    }
                    epi
                });
                main.extend(epi.iter().copied());
            }
        }
        if let Some(p) = fixed {
            let bd = p.tr_mul(&row.sv) + &row.sd;
            rhs -= sigma * problem.uncertainty.support(bd.as_slice());
        }

        // max over 𝒲 of aᵀw̃ ≤ γ₁Σyl + γ₂Σ(ru + rd) subject to, for each s,
        // −yl_s + ru_{s−1} − ru_s − rd_{s−1} + rd_s ≤ a_s.
        let flip = matches!(options.fault, Some(FaultInjection::FlipFlexEqualitySign { row: fr }) if fr == r);
        let side = if flip { -1.0 } else { 1.0 };
        let ramps = h.saturating_sub(1);
        let yl = b.vars(h);
        let ru = b.vars(ramps);
        let rd = b.vars(ramps);
        b.nonneg.extend(yl..b.next);
        main.extend((0..h).map(|s| (yl + s, w_cost)));
        main.extend((0..ramps).flat_map(|j| [(ru + j, ramp_cost), (rd + j, ramp_cost)]));
        for (s, &(var, constant)) in response.iter().enumerate() {
            let mut ineq = vec![(yl + s, -1.0)];
            if s > 0 {
                ineq.push((ru + s - 1, 1.0));
                ineq.push((rd + s - 1, -1.0));
            }
            if s + 1 < h {
                ineq.push((ru + s, -1.0));
                ineq.push((rd + s, 1.0));
            }
            if let Some((j, c)) = var {
                ineq.push((j, -side * sigma * c));
            }
            let rhs = w_constant(&mut ineq, side * sigma * constant);
            b.ineqs.push((ineq, rhs));
        }
        b.ineqs.push((main, rhs));
    }

    let mut lp = LinearProgram::new(b.next);
    for j in b.nonneg {
        lp.set_bounds(j, 0.0, f64::INFINITY);
    }
    for (j, lo, hi) in b.bounds {
        lp.set_bounds(j, lo, hi);
    }
    for (j, c) in b.objective {
        lp.objective[j] = c;
    }
    for (row, rhs) in b.eqs {
        lp.add_eq(&row, rhs);
    }
    for (row, rhs) in b.ineqs {
        lp.add_ineq(&row, rhs);
    }
    Ok(CompactProgram { lp, gamma1_var, horizon: n_steps, h, pn, k_vars, p_vars })
}
