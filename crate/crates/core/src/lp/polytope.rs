use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{solve_lp, LinearProgram, LpStatus};
use crate::error::{Error, Result};

/// Largest dimension accepted by the brute-force vertex enumerators.
pub const MAX_ENUMERATION_DIM: usize = 16;

/// H-representation `{x : Hx − g ≤ 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl Polytope {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self> {
        if h.nrows() != g.len() {
            return Err(Error::DimensionMismatch(format!(
                "polytope has {} rows but {} offsets",
                h.nrows(),
                g.len()
            )));
        }
        Ok(Self { h, g })
    }

    /// Axis-aligned box `lower ≤ x ≤ upper` as stacked `[I; −I]` rows.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch("box bounds differ in length".into()));
        }
        let d = lower.len();
        let mut h = DMatrix::zeros(2 * d, d);
        let mut g = DVector::zeros(2 * d);
        for i in 0..d {
            h[(i, i)] = 1.0;
            g[i] = upper[i];
            h[(d + i, i)] = -1.0;
            g[d + i] = -lower[i];
        }
        Ok(Self { h, g })
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.h.nrows()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_residual(x) <= tol
    }

    /// `max_i (Hx − g)_i`, or −∞ for a polytope without rows.
    pub fn max_residual(&self, x: &DVector<f64>) -> f64 {
        (&self.h * x - &self.g).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-coordinate bounds when every row touches exactly one coordinate.
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let mut lower = vec![f64::NEG_INFINITY; d];
        let mut upper = vec![f64::INFINITY; d];
        for i in 0..self.num_rows() {
            let mut nz = (0..d).filter(|&j| self.h[(i, j)] != 0.0);
            match (nz.next(), nz.next()) {
                (Some(j), None) => {
                    let a = self.h[(i, j)];
                    let bound = self.g[i] / a;
                    if a > 0.0 {
                        upper[j] = upper[j].min(bound);
                    } else {
                        lower[j] = lower[j].max(bound);
                    }
                }
                (None, _) => {
                    if self.g[i] < 0.0 {
                        // 0 ≤ g fails: empty set, which the LP path reports.
                        return None;
                    }
                }
                _ => return None,
            }
        }
        Some((lower, upper))
    }

    /// The LP `min −cᵀx  s.t.  Hx ≤ g` over free `x`.
    pub fn support_lp(&self, c: &DVector<f64>) -> LinearProgram {
        let d = self.dim();
        let mut lp = LinearProgram::new(d);
        lp.objective = c.iter().map(|v| -v).collect();
        for i in 0..self.num_rows() {
            let row: Vec<(usize, f64)> = (0..d).map(|j| (j, self.h[(i, j)])).collect();
            lp.add_ineq(&row, self.g[i]);
        }
        lp
    }

    pub fn is_empty(&self) -> Result<bool> {
        let lp = self.support_lp(&DVector::zeros(self.dim()));
        Ok(solve_lp(&lp)?.status == LpStatus::Infeasible)
    }

    /// Bounded iff the support function is finite along every ±eᵢ.
    pub fn is_bounded(&self) -> Result<bool> {
        for j in 0..self.dim() {
            for s in [1.0, -1.0] {
                let mut c = DVector::zeros(self.dim());
                c[j] = s;
                match max_over_polytope(&c, self) {
                    Ok(_) => {}
                    Err(Error::Unbounded(_)) => return Ok(false),
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(true)
    }
}

/// `max {cᵀx : x ∈ P}` and a maximizer.
///
/// Boxes use the closed form `Σᵢ (cᵢ > 0 ? cᵢ·upperᵢ : cᵢ·lowerᵢ)`; everything
/// else goes through [`solve_lp`].
pub fn max_over_polytope(c: &DVector<f64>, p: &Polytope) -> Result<(f64, DVector<f64>)> {
    if c.len() != p.dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has length {} but polytope dimension is {}",
            c.len(),
            p.dim()
        )));
    }
    if let Some((lower, upper)) = p.as_box() {
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::EmptyPolytope);
        }
        let mut value = 0.0;
        let mut arg = DVector::zeros(c.len());
        for i in 0..c.len() {
            let ci = c[i];
            let xi = if ci > 0.0 {
                upper[i]
            } else if ci < 0.0 {
                lower[i]
            } else if upper[i].is_finite() {
                upper[i]
            } else if lower[i].is_finite() {
                lower[i]
            } else {
                0.0
            };
            if !xi.is_finite() {
                return Err(Error::Unbounded(format!("coordinate {i} has no bound in the direction of c")));
            }
            if ci != 0.0 {
                value += ci * xi;
            }
            arg[i] = xi;
        }
        return Ok((value, arg));
    }
    let sol = solve_lp(&p.support_lp(c))?;
    match sol.status {
        LpStatus::Optimal => Ok((-sol.objective_value, DVector::from_vec(sol.primal))),
        LpStatus::Infeasible => Err(Error::EmptyPolytope),
        LpStatus::Unbounded => Err(Error::Unbounded("support function is infinite".into())),
    }
}

/// All vertices of the box `[lower, upper]`; coordinates with `lower == upper`
/// contribute a single value, so the count is `2^k` for `k` non-degenerate axes.
pub fn enumerate_box_vertices(lower: &[f64], upper: &[f64]) -> Result<Vec<DVector<f64>>> {
    if lower.len() != upper.len() {
        return Err(Error::DimensionMismatch("box bounds differ in length".into()));
    }
    let d = lower.len();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::DimensionTooLarge { dim: d, max: MAX_ENUMERATION_DIM });
    }
    if let Some(i) = (0..d).find(|&i| !(lower[i] <= upper[i])) {
        return Err(Error::InvalidArgument(format!(
            "box axis {i} has lower {} above upper {}",
            lower[i], upper[i]
        )));
    }
    let mut out = vec![DVector::zeros(d)];
    for i in 0..d {
        let choices: &[f64] = if lower[i] == upper[i] { &[lower[i]][..] } else { &[lower[i], upper[i]][..] };
        out = out
            .into_iter()
            .flat_map(|v| {
                choices.iter().map(move |&c| {
                    let mut w = v.clone();
                    w[i] = c;
                    w
                })
            })
            .collect();
    }
    Ok(out)
}

/// Brute-force vertex enumeration: every `d`-subset of rows whose equality system
/// is nonsingular and whose solution satisfies all rows is a vertex.
pub fn enumerate_polytope_vertices(p: &Polytope, tol: f64) -> Result<Vec<DVector<f64>>> {
    let d = p.dim();
    let l = p.num_rows();
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::DimensionTooLarge { dim: d, max: MAX_ENUMERATION_DIM });
    }
    if d == 0 {
        return Ok(vec![DVector::zeros(0)]);
    }
    let mut vertices: Vec<DVector<f64>> = Vec::new();
    let mut idx: Vec<usize> = (0..d).collect();
    if l < d {
        return Ok(vertices);
    }
    loop {
        let sub_h = DMatrix::from_fn(d, d, |r, c| p.h[(idx[r], c)]);
        let sub_g = DVector::from_fn(d, |r, _| p.g[idx[r]]);
        if let Some(x) = sub_h.clone().lu().solve(&sub_g) {
            let residual = &sub_h * &x - &sub_g;
            if residual.amax() <= 1e-9 * (1.0 + sub_g.amax())
                && p.contains(&x, tol)
                && !vertices.iter().any(|v| (v - &x).amax() <= tol * (1.0 + x.amax()))
            {
                vertices.push(x);
            }
        }
        // next combination
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(vertices);
            }
            i -= 1;
            if idx[i] < l - d + i {
                break;
            }
        }
        idx[i] += 1;
        for k in i + 1..d {
            idx[k] = idx[k - 1] + 1;
        }
    }
}
