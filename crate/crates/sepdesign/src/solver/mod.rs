//! Self-contained LP/MILP kernel.
//!
//! [`solve_lp`] is a dense bounded-variable two-phase simplex.
//! [`solve_milp`] is branch-and-bound on top of it with native SOS-1
//! branching (complementarity is never rewritten with big-M constants).
//! Problems round-trip through a line-oriented text format
//! ([`format`]) which is also how external backends are driven
//! ([`backend`]).

pub mod backend;
pub mod format;
mod lp;
mod milp;

pub use backend::{external_backend_solve, BackendDescriptor, BackendError};
pub use lp::solve_lp;
pub use milp::{solve_milp, solve_milp_ext, SolveHooks};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integrality marker for one variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
}

/// One decision variable: bounds may be infinite.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct VarSpec {
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

impl VarSpec {
    pub fn continuous(lb: f64, ub: f64) -> Self {
        VarSpec { lb, ub, kind: VarKind::Continuous }
    }

    pub fn free() -> Self {
        VarSpec::continuous(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn nonneg() -> Self {
        VarSpec::continuous(0.0, f64::INFINITY)
    }

    pub fn binary() -> Self {
        VarSpec { lb: 0.0, ub: 1.0, kind: VarKind::Binary }
    }
}

/// Constraint sense. Rows are `a'x <= rhs` or `a'x = rhs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Eq,
}

/// Sparse constraint row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowSpec {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// Solver-agnostic mixed-integer linear program (minimization).
///
/// `sos1_groups` lists sets of variables of which at most one may be nonzero
/// in any feasible solution. `quadratic` holds an optional diagonal quadratic
/// objective term; the built-in solver rejects it and it exists only so that
/// quadratic problems can be exported to external backends.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MilpProblem {
    pub name: String,
    pub vars: Vec<VarSpec>,
    pub rows: Vec<RowSpec>,
    pub sos1_groups: Vec<Vec<usize>>,
    /// Optional branching priority per SOS-1 group (higher first); empty
    /// means uniform.
    pub sos_priorities: Vec<i32>,
    pub objective: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, f64)>,
}

impl MilpProblem {
    pub fn new(name: impl Into<String>) -> Self {
        MilpProblem { name: name.into(), ..Default::default() }
    }

    pub fn add_var(&mut self, spec: VarSpec) -> usize {
        self.vars.push(spec);
        self.vars.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, spec: VarSpec) -> std::ops::Range<usize> {
        let start = self.vars.len();
        self.vars.extend(std::iter::repeat(spec).take(count));
        start..self.vars.len()
    }

    pub fn add_row(&mut self, sense: RowSense, rhs: f64, coeffs: Vec<(usize, f64)>) -> usize {
        self.rows.push(RowSpec { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn add_sos1(&mut self, members: Vec<usize>) {
        self.sos1_groups.push(members);
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn is_quadratic(&self) -> bool {
        !self.quadratic.is_empty()
    }

    /// Structural sanity: indices in range, binary bounds inside [0,1],
    /// SOS-1 groups nonempty, finite coefficients.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.vars.len();
        for (i, v) in self.vars.iter().enumerate() {
            if v.lb > v.ub {
                return Err(ProblemError::EmptyBounds { var: i });
            }
            if v.kind == VarKind::Binary && (v.lb < -1e-12 || v.ub > 1.0 + 1e-12) {
                return Err(ProblemError::BinaryBounds { var: i });
            }
        }
        let check_coeffs = |coeffs: &[(usize, f64)]| -> Result<(), ProblemError> {
            for &(j, c) in coeffs {
                if j >= n {
                    return Err(ProblemError::IndexOutOfRange { index: j, vars: n });
                }
                if !c.is_finite() {
                    return Err(ProblemError::NonFiniteCoefficient { index: j });
                }
            }
            Ok(())
        };
        for row in &self.rows {
            check_coeffs(&row.coeffs)?;
            if !row.rhs.is_finite() {
                return Err(ProblemError::NonFiniteRhs);
            }
        }
        check_coeffs(&self.objective)?;
        check_coeffs(&self.quadratic)?;
        for (g, group) in self.sos1_groups.iter().enumerate() {
            if group.is_empty() {
                return Err(ProblemError::EmptySos { group: g });
            }
            for &j in group {
                if j >= n {
                    return Err(ProblemError::IndexOutOfRange { index: j, vars: n });
                }
            }
        }
        Ok(())
    }

    /// Objective value of a point (linear part only).
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(j, c)| c * x[j]).sum()
    }

    /// Maximum scaled violation of rows, bounds, integrality and SOS-1
    /// groups at `x`; used to re-verify every solution the solver reports.
    pub fn max_violation(&self, x: &[f64], sos_tol: f64) -> f64 {
        let mut worst = 0.0f64;
        for row in &self.rows {
            let mut act = 0.0;
            let mut scale = 1.0f64;
            for &(j, c) in &row.coeffs {
                act += c * x[j];
                scale = scale.max(c.abs());
            }
            let resid = match row.sense {
                RowSense::Le => act - row.rhs,
                RowSense::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(resid / scale);
        }
        for (j, v) in self.vars.iter().enumerate() {
            worst = worst.max(v.lb - x[j]).max(x[j] - v.ub);
            if v.kind == VarKind::Binary {
                worst = worst.max((x[j] - x[j].round()).abs());
            }
        }
        for group in &self.sos1_groups {
            let mut nonzero = 0usize;
            let mut second = 0.0f64;
            let mut largest = 0.0f64;
            for &j in group {
                let a = x[j].abs();
                if a > sos_tol {
                    nonzero += 1;
                }
                if a > largest {
                    second = largest;
                    largest = a;
                } else if a > second {
                    second = a;
                }
            }
            if nonzero > 1 {
                worst = worst.max(second);
            }
        }
        worst
    }
}

/// Structural problem defects detected before solving.
#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("variable {var} has lb > ub")]
    EmptyBounds { var: usize },
    #[error("binary variable {var} has bounds outside [0,1]")]
    BinaryBounds { var: usize },
    #[error("index {index} out of range for {vars} variables")]
    IndexOutOfRange { index: usize, vars: usize },
    #[error("non-finite coefficient on variable {index}")]
    NonFiniteCoefficient { index: usize },
    #[error("non-finite right-hand side")]
    NonFiniteRhs,
    #[error("SOS-1 group {group} is empty")]
    EmptySos { group: usize },
}

/// LP solve outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Result of [`solve_lp`].
///
/// `duals` holds one multiplier per row with the sign convention that makes
/// binding `<=` rows carry nonnegative multipliers in a minimization
/// (`c + A' dual` vanishes on the free part of an optimal basis). On
/// `Infeasible`, `farkas_rows` lists the rows participating in an
/// infeasibility certificate; on `Unbounded`, `ray` is an improving ray.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    pub duals: Vec<f64>,
    pub farkas_rows: Vec<usize>,
    pub ray: Vec<f64>,
}

/// MILP solve outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    GapLimit,
    NodeLimit,
    TimeLimit,
}

/// Result of [`solve_milp`]. Limit statuses carry the incumbent if one was
/// found before the limit hit.
#[derive(Clone, Debug)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub objective: Option<f64>,
    pub primal: Option<Vec<f64>>,
    pub best_bound: f64,
    pub node_count: u64,
    pub wall_time_seconds: f64,
}

impl MilpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == MilpStatus::Optimal
    }
}

/// Branching priority when both binaries and SOS-1 groups are violated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branching {
    MostViolatedSosFirst,
    BinaryFirst,
}

/// Order in which open nodes are explored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeOrder {
    BestBound,
    DepthFirst,
}

/// Tolerances and limits for the MILP kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverParams {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub sos_tol: f64,
    pub rel_gap: f64,
    pub node_limit: u64,
    pub time_limit_seconds: f64,
    pub branching: Branching,
    pub node_order: NodeOrder,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            feas_tol: 1e-7,
            opt_tol: 1e-7,
            sos_tol: 1e-7,
            rel_gap: 1e-6,
            node_limit: 20_000_000,
            time_limit_seconds: f64::INFINITY,
            branching: Branching::MostViolatedSosFirst,
            node_order: NodeOrder::BestBound,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), ProblemError> {
        assert!(self.feas_tol > 0.0 && self.opt_tol > 0.0 && self.sos_tol > 0.0 && self.rel_gap > 0.0);
        Ok(())
    }
}

/// Solver failure distinct from a well-defined infeasible/unbounded outcome.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("problem is malformed: {0}")]
    Problem(#[from] ProblemError),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("the built-in solver does not support quadratic objectives; configure an external backend")]
    UnsupportedObjective,
}
