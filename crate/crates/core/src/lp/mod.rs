//! Linear-programming substrate.
//!
//! Every min/max in the robust machinery is posed as a [`LinearProgram`] and handed
//! to [`solve_lp`]. Two backends sit behind the same contract: a dense two-phase
//! simplex for small problems and the Clarabel interior-point solver for the large
//! sparse reformulations. [`Polytope`] adds the H-representation helpers (support
//! function, box detection, brute-force vertex enumeration) used as oracles.

mod interior;
mod polytope;
mod simplex;
mod sparse;

pub use polytope::{enumerate_box_vertices, enumerate_polytope_vertices, max_over_polytope, Polytope};
pub use sparse::SparseMatrix;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility tolerance (absolute) accepted for an optimal primal point.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Relative duality-gap tolerance.
pub const DUALITY_GAP_TOL: f64 = 1e-6;

/// `min cᵀx  s.t.  A_ub x ≤ b_ub,  A_eq x = b_eq,  lb ≤ x ≤ ub`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub ineq_matrix: SparseMatrix,
    pub ineq_rhs: Vec<f64>,
    pub eq_matrix: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

impl LinearProgram {
    /// A program over `num_vars` free variables with a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: vec![0.0; num_vars],
            ineq_matrix: SparseMatrix::new(num_vars),
            ineq_rhs: Vec::new(),
            eq_matrix: SparseMatrix::new(num_vars),
            eq_rhs: Vec::new(),
            lower_bounds: vec![f64::NEG_INFINITY; num_vars],
            upper_bounds: vec![f64::INFINITY; num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn add_ineq(&mut self, row: &[(usize, f64)], rhs: f64) -> usize {
        self.ineq_matrix.push_row(row);
        self.ineq_rhs.push(rhs);
        self.ineq_rhs.len() - 1
    }

    pub fn add_eq(&mut self, row: &[(usize, f64)], rhs: f64) -> usize {
        self.eq_matrix.push_row(row);
        self.eq_rhs.push(rhs);
        self.eq_rhs.len() - 1
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower_bounds[var] = lower;
        self.upper_bounds[var] = upper;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let mismatch = |what: &str, got: usize, want: usize| {
            Error::DimensionMismatch(format!("{what}: got {got}, expected {want}"))
        };
        if self.ineq_matrix.ncols() != n {
            return Err(mismatch("inequality columns", self.ineq_matrix.ncols(), n));
        }
        if self.eq_matrix.ncols() != n {
            return Err(mismatch("equality columns", self.eq_matrix.ncols(), n));
        }
        if self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(mismatch("inequality rhs", self.ineq_rhs.len(), self.ineq_matrix.nrows()));
        }
        if self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(mismatch("equality rhs", self.eq_rhs.len(), self.eq_matrix.nrows()));
        }
        if self.lower_bounds.len() != n || self.upper_bounds.len() != n {
            return Err(mismatch("bounds", self.lower_bounds.len(), n));
        }
        for (j, (&lo, &hi)) in self.lower_bounds.iter().zip(&self.upper_bounds).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
            if lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "variable {j} has lower bound {lo} above upper bound {hi}"
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.objective) || !finite(&self.ineq_rhs) || !finite(&self.eq_rhs) {
            return Err(Error::InvalidArgument("non-finite objective or right-hand side".into()));
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, rhs) in self.ineq_rhs.iter().enumerate() {
            worst = worst.max(self.ineq_matrix.row_dot(i, x) - rhs);
        }
        for (i, rhs) in self.eq_rhs.iter().enumerate() {
            worst = worst.max((self.eq_matrix.row_dot(i, x) - rhs).abs());
        }
        for (j, &xj) in x.iter().enumerate() {
            worst = worst.max(self.lower_bounds[j] - xj).max(xj - self.upper_bounds[j]);
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Serializes the program with the `c, A_ub, b_ub, A_eq, b_eq, lb, ub` schema.
    ///
    /// Matrices are written in coordinate form (`shape`, `row`, `col`, `val`) and
    /// infinite bounds as `null`, so the dump can be fed to `scipy.optimize.linprog`
    /// through `scipy.sparse.coo_matrix`.
    pub fn to_json(&self) -> serde_json::Value {
        self.to_json_annotated(None)
    }

    pub fn to_json_annotated(&self, bilinear_terms: Option<serde_json::Value>) -> serde_json::Value {
        let bound = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null };
        let mut out = serde_json::json!({
            "c": self.objective,
            "A_ub": CooJson::from(&self.ineq_matrix),
            "b_ub": self.ineq_rhs,
            "A_eq": CooJson::from(&self.eq_matrix),
            "b_eq": self.eq_rhs,
            "lb": self.lower_bounds.iter().map(|&v| bound(v)).collect::<Vec<_>>(),
            "ub": self.upper_bounds.iter().map(|&v| bound(v)).collect::<Vec<_>>(),
        });
        if let Some(terms) = bilinear_terms {
            out["bilinear_terms"] = terms;
        }
        out
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: RawLpJson = serde_json::from_value(value.clone())?;
        let n = raw.c.len();
        let unpack = |v: Vec<Option<f64>>, inf: f64| -> Vec<f64> {
            v.into_iter().map(|b| b.unwrap_or(inf)).collect()
        };
        let lp = LinearProgram {
            objective: raw.c,
            ineq_matrix: raw.a_ub.into_sparse(n)?,
            ineq_rhs: raw.b_ub,
            eq_matrix: raw.a_eq.into_sparse(n)?,
            eq_rhs: raw.b_eq,
            lower_bounds: unpack(raw.lb, f64::NEG_INFINITY),
            upper_bounds: unpack(raw.ub, f64::INFINITY),
        };
        lp.validate()?;
        Ok(lp)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CooJson {
    shape: [usize; 2],
    row: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl From<&SparseMatrix> for CooJson {
    fn from(m: &SparseMatrix) -> Self {
        let mut out = CooJson {
            shape: [m.nrows(), m.ncols()],
            row: Vec::with_capacity(m.nnz()),
            col: Vec::with_capacity(m.nnz()),
            val: Vec::with_capacity(m.nnz()),
        };
        for (i, j, v) in m.triplets() {
            out.row.push(i);
            out.col.push(j);
            out.val.push(v);
        }
        out
    }
}

impl CooJson {
    fn into_sparse(self, ncols: usize) -> Result<SparseMatrix> {
        if self.shape[1] != ncols || self.row.len() != self.col.len() || self.row.len() != self.val.len() {
            return Err(Error::DimensionMismatch("malformed coordinate matrix".into()));
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.shape[0]];
        for ((i, j), v) in self.row.into_iter().zip(self.col).zip(self.val) {
            if i >= rows.len() || j >= ncols {
                return Err(Error::DimensionMismatch(format!("entry ({i}, {j}) out of range")));
            }
            rows[i].push((j, v));
        }
        let mut m = SparseMatrix::new(ncols);
        for r in rows {
            m.push_row(&r);
        }
        Ok(m)
    }
}

#[derive(Debug, Deserialize)]
struct RawLpJson {
    c: Vec<f64>,
    #[serde(rename = "A_ub")]
    a_ub: CooJson,
    b_ub: Vec<f64>,
    #[serde(rename = "A_eq")]
    a_eq: CooJson,
    b_eq: Vec<f64>,
    lb: Vec<Option<f64>>,
    ub: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`solve_lp`]. Duals follow the convention
/// `c + A_ubᵀ λ + A_eqᵀ ν − (bound multipliers) = 0` with `λ ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub primal: Vec<f64>,
    pub objective_value: f64,
    pub dual_ineq: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn non_optimal(status: LpStatus, lp: &LinearProgram, iterations: usize) -> Self {
        Self {
            status,
            primal: vec![0.0; lp.num_vars()],
            objective_value: match status {
                LpStatus::Infeasible => f64::INFINITY,
                _ => f64::NEG_INFINITY,
            },
            dual_ineq: vec![0.0; lp.num_ineq()],
            dual_eq: vec![0.0; lp.num_eq()],
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Dense simplex for small problems, interior point otherwise.
    Auto,
    Simplex,
    InteriorPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub backend: Backend,
    /// Feasibility/optimality tolerance passed to the interior-point backend.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Auto,
            tolerance: 1e-9,
            max_iterations: 500,
        }
    }
}

/// Problems with at most this many dense tableau entries go to the simplex backend.
const SIMPLEX_SIZE_LIMIT: usize = 400_000;

/// Solves `lp` with default options.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    solve_lp_with(lp, &SolverOptions::default())
}

pub fn solve_lp_with(lp: &LinearProgram, opts: &SolverOptions) -> Result<LpSolution> {
    lp.validate()?;
    let backend = match opts.backend {
        Backend::Auto => {
            let rows = lp.num_ineq() + lp.num_eq() + lp.num_vars();
            let cols = 2 * lp.num_vars() + lp.num_ineq() + lp.num_eq() + rows;
            if rows.saturating_mul(cols) <= SIMPLEX_SIZE_LIMIT {
                Backend::Simplex
            } else {
                Backend::InteriorPoint
            }
        }
        b => b,
    };
    match backend {
        Backend::Simplex => {
            let sol = match simplex::solve(lp, 50_000) {
                // Cycling on a degenerate program: an automatic choice moves on.
                Err(Error::Numerical(_)) if opts.backend == Backend::Auto => return interior::solve(lp, opts),
                r => r?,
            };
            // Dense simplex can lose feasibility to round-off on badly scaled rows, so
            // an automatic choice confirms a non-optimal verdict with the other method.
            if opts.backend == Backend::Auto && sol.status != LpStatus::Optimal {
                let check = interior::solve(lp, opts)?;
                if check.status == LpStatus::Optimal {
                    return Ok(check);
                }
            }
            Ok(sol)
        }
        _ => interior::solve(lp, opts),
    }
}
