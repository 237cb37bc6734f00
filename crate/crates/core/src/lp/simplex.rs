//! Dense two-phase tableau simplex.
//!
//! Bounds are folded into the standard form by shifting, reflecting or splitting
//! each variable; finite upper bounds on shifted variables become extra rows.
//! Dantzig pricing switches to Bland's rule after a run of degenerate pivots.

use super::{LinearProgram, LpSolution, LpStatus};
use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-10;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Clone, Copy)]
enum VarMap {
    Shift { col: usize, lower: f64 },
    Reflect { col: usize, upper: f64 },
    Split { pos: usize, neg: usize },
}

#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    Ineq(usize),
    UpperBound,
    Eq(usize),
}

struct Tableau {
    data: Vec<f64>,
    width: usize,
    rows: usize,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn obj_row(&self) -> usize {
        self.rows
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let piv = self.data[pr * w + pc];
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v /= piv;
        }
        let (before, rest) = self.data.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (r, p) in row.iter_mut().zip(prow.iter()) {
                    *r -= f * p;
                }
                row[pc] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the current objective row. Columns with
    /// `allowed[j] == false` never enter. Returns `Ok(false)` on unboundedness.
    fn optimize(&mut self, allowed: &[bool], iterations: &mut usize, max_iter: usize) -> Result<bool> {
        let ncols = self.width - 1;
        let obj = self.obj_row();
        let mut degenerate_run = 0usize;
        loop {
            let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
            let mut entering = None;
            let mut best = -COST_TOL;
            for j in 0..ncols {
                if !allowed[j] {
                    continue;
                }
                let d = self.at(obj, j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = entering else {
                return Ok(true);
            };

            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leaving = match leaving {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((pr, ratio)) = leaving else {
                return Ok(false);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
            *iterations += 1;
            if *iterations > max_iter {
                return Err(Error::Numerical(format!(
                    "simplex iteration limit {max_iter} exceeded"
                )));
            }
        }
    }

    /// Rebuilds the objective row as reduced costs of `cost`.
    fn set_objective(&mut self, cost: &[f64]) {
        let w = self.width;
        let obj = self.obj_row();
        let mut row = vec![0.0; w];
        row[..cost.len()].copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (r, t) in row.iter_mut().zip(&self.data[i * w..(i + 1) * w]) {
                    *r -= cb * t;
                }
            }
        }
        self.data[obj * w..(obj + 1) * w].copy_from_slice(&row);
    }
}

pub(super) fn solve(lp: &LinearProgram, max_iter: usize) -> Result<LpSolution> {
    let n = lp.num_vars();

    let mut maps = Vec::with_capacity(n);
    let mut nstruct = 0usize;
    let mut ub_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi) = (lp.lower_bounds[j], lp.upper_bounds[j]);
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: nstruct, lower: lo });
            if hi.is_finite() {
                ub_rows.push((nstruct, hi - lo));
            }
            nstruct += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Reflect { col: nstruct, upper: hi });
            nstruct += 1;
        } else {
            maps.push(VarMap::Split { pos: nstruct, neg: nstruct + 1 });
            nstruct += 2;
        }
    }

    let transform = |row: &mut dyn Iterator<Item = (usize, f64)>| -> (Vec<(usize, f64)>, f64) {
        let mut out = Vec::new();
        let mut shift = 0.0;
        for (j, a) in row {
            match maps[j] {
                VarMap::Shift { col, lower } => {
                    out.push((col, a));
                    shift += a * lower;
                }
                VarMap::Reflect { col, upper } => {
                    out.push((col, -a));
                    shift += a * upper;
                }
                VarMap::Split { pos, neg } => {
                    out.push((pos, a));
                    out.push((neg, -a));
                }
            }
        }
        (out, shift)
    };

    let mut rows: Vec<(Vec<(usize, f64)>, f64, RowKind)> = Vec::new();
    for i in 0..lp.num_ineq() {
        let (entries, shift) = transform(&mut lp.ineq_matrix.row(i));
        rows.push((entries, lp.ineq_rhs[i] - shift, RowKind::Ineq(i)));
    }
    for &(col, bound) in &ub_rows {
        rows.push((vec![(col, 1.0)], bound, RowKind::UpperBound));
    }
    for i in 0..lp.num_eq() {
        let (entries, shift) = transform(&mut lp.eq_matrix.row(i));
        rows.push((entries, lp.eq_rhs[i] - shift, RowKind::Eq(i)));
    }

    let m = rows.len();
    let nslack = rows.iter().filter(|r| !matches!(r.2, RowKind::Eq(_))).count();
    let needs_art: Vec<bool> = rows
        .iter()
        .map(|(_, rhs, kind)| matches!(kind, RowKind::Eq(_)) || *rhs < 0.0)
        .collect();
    let nart = needs_art.iter().filter(|&&b| b).count();
    let ncols = nstruct + nslack + nart;
    let width = ncols + 1;

    let mut t = Tableau {
        data: vec![0.0; (m + 1) * width],
        width,
        rows: m,
        basis: vec![0; m],
    };
    let mut slack_col = vec![usize::MAX; m];
    let mut art_col = vec![usize::MAX; m];
    let mut sign = vec![1.0; m];
    let (mut next_slack, mut next_art) = (nstruct, nstruct + nslack);
    let mut bmax: f64 = 0.0;
    for (i, (entries, rhs, kind)) in rows.iter().enumerate() {
        let s = if *rhs < 0.0 { -1.0 } else { 1.0 };
        sign[i] = s;
        let base = i * width;
        for &(j, a) in entries {
            t.data[base + j] += s * a;
        }
        t.data[base + width - 1] = s * rhs;
        bmax = bmax.max(rhs.abs());
        if !matches!(kind, RowKind::Eq(_)) {
            slack_col[i] = next_slack;
            t.data[base + next_slack] = s;
            next_slack += 1;
        }
        if needs_art[i] {
            art_col[i] = next_art;
            t.data[base + next_art] = 1.0;
            t.basis[i] = next_art;
            next_art += 1;
        } else {
            t.basis[i] = slack_col[i];
        }
    }

    let mut iterations = 0usize;
    let is_art = |j: usize| j >= nstruct + nslack;

    if nart > 0 {
        let mut phase1 = vec![0.0; ncols];
        for c in phase1.iter_mut().skip(nstruct + nslack) {
            *c = 1.0;
        }
        t.set_objective(&phase1);
        let allowed = vec![true; ncols];
        t.optimize(&allowed, &mut iterations, max_iter)?;
        let infeasibility = -t.rhs(t.obj_row());
        if infeasibility > 1e-9 * (1.0 + bmax) {
            return Ok(LpSolution::non_optimal(LpStatus::Infeasible, lp, iterations));
        }
        for i in 0..m {
            if is_art(t.basis[i]) {
                if let Some(j) = (0..nstruct + nslack).find(|&j| t.at(i, j).abs() > 1e-9) {
                    t.pivot(i, j);
                    iterations += 1;
                }
            }
        }
    }

    let mut cost = vec![0.0; ncols];
    for (j, map) in maps.iter().enumerate() {
        let c = lp.objective[j];
        match *map {
            VarMap::Shift { col, .. } => cost[col] = c,
            VarMap::Reflect { col, .. } => cost[col] = -c,
            VarMap::Split { pos, neg } => {
                cost[pos] = c;
                cost[neg] = -c;
            }
        }
    }
    t.set_objective(&cost);
    let allowed: Vec<bool> = (0..ncols).map(|j| !is_art(j)).collect();
    if !t.optimize(&allowed, &mut iterations, max_iter)? {
        return Ok(LpSolution::non_optimal(LpStatus::Unbounded, lp, iterations));
    }

    let mut values = vec![0.0; ncols];
    for i in 0..m {
        values[t.basis[i]] = t.rhs(i);
    }
    let primal: Vec<f64> = maps
        .iter()
        .map(|map| match *map {
            VarMap::Shift { col, lower } => lower + values[col],
            VarMap::Reflect { col, upper } => upper - values[col],
            VarMap::Split { pos, neg } => values[pos] - values[neg],
        })
        .collect();

    let obj = t.obj_row();
    let mut dual_ineq = vec![0.0; lp.num_ineq()];
    let mut dual_eq = vec![0.0; lp.num_eq()];
    for (i, (_, _, kind)) in rows.iter().enumerate() {
        match *kind {
            RowKind::Ineq(k) => dual_ineq[k] = t.at(obj, slack_col[i]).max(0.0),
            RowKind::Eq(k) => dual_eq[k] = sign[i] * t.at(obj, art_col[i]),
            RowKind::UpperBound => {}
        }
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective_value: lp.objective_at(&primal),
        primal,
        dual_ineq,
        dual_eq,
        iterations,
    })
}
