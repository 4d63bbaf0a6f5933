//! Design formulations: the per-pair inner worst-case LP, the exact MILP
//! obtained by replacing each inner LP with its KKT system (complementarity
//! as SOS-1 pairs), the conservative robust-dual MILP, pair-elimination
//! preprocessing, objective epigraphs and complexity accounting.
//!
//! The inner problem of a pair at a fixed input u is
//!
//! ```text
//! δ*(u) = min δ  s.t.  R x̄ <= [0; 1] δ + r - S u,   H_x̄ x̄ <= h_x̄
//! ```
//!
//! whose optimum is the smallest uniform bound an adversarial uncertainty
//! realization can force on every ± output-difference row. The exact design
//! minimizes J(u) subject to δ*(u) >= ε for every retained pair, encoded
//! single-level through the inner KKT conditions. The conservative design
//! instead enforces, per pair, at least one difference row robustly above ε
//! with the robust constraints dualized row by row.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::ops::Range;
use thiserror::Error;

use crate::model::{ObjectiveSpec, Polytope, Scenario};
use crate::solver::{
    solve_lp, solve_milp_ext, LpStatus, MilpProblem, MilpSolution, MilpStatus, RowSense,
    SolveError, SolveHooks, SolverParams, VarSpec,
};
use crate::stack::{stack_all, stack_pair, StackedGlobal, StackedPair};

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("scenario is invalid: {0:?}")]
    InvalidScenario(Vec<String>),
    #[error("uncertainty set of pair ({0}, {1}) is empty")]
    UncertaintySetEmpty(usize, usize),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

// --------------------------------------------------------------------- //
// Objective epigraphs
// --------------------------------------------------------------------- //

/// Auxiliary variables and rows realizing an [`ObjectiveSpec`] as a linear
/// cost over the input sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObjectiveEncoding {
    pub kind: ObjectiveSpec,
    pub t: usize,
    pub m_u: usize,
    pub abs_vars: Option<Range<usize>>,
    pub inf_var: Option<usize>,
    pub delta_inf_var: Option<usize>,
    pub quadratic: bool,
}

impl ObjectiveEncoding {
    /// Largest |u_j| any point with cost below `level` can have, or
    /// infinity when the cost does not bound the coordinates (pure
    /// input-rate objectives).
    pub fn coordinate_cap(&self, level: f64) -> f64 {
        match self.kind {
            ObjectiveSpec::OneNorm | ObjectiveSpec::InfNorm => level,
            ObjectiveSpec::WeightedSum { one_norm_weight, inf_norm_weight } => {
                level / (one_norm_weight + inf_norm_weight)
            }
            ObjectiveSpec::DeltaInfNorm { one_norm_weight, .. } => {
                if one_norm_weight > 0.0 {
                    level / one_norm_weight
                } else {
                    f64::INFINITY
                }
            }
            ObjectiveSpec::ExternalQuadratic => {
                if level > 0.0 {
                    level.sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    /// Evaluate J(u) directly from an input sequence (the independent route
    /// used by verification and brute-force tests).
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        let one: f64 = u.iter().map(|v| v.abs()).sum();
        let inf = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut dinf = 0.0f64;
        for k in 1..self.t {
            for j in 0..self.m_u {
                dinf = dinf.max((u[k * self.m_u + j] - u[(k - 1) * self.m_u + j]).abs());
            }
        }
        match self.kind {
            ObjectiveSpec::OneNorm => one,
            ObjectiveSpec::InfNorm => inf,
            ObjectiveSpec::WeightedSum { one_norm_weight, inf_norm_weight } => {
                one_norm_weight * one + inf_norm_weight * inf
            }
            ObjectiveSpec::DeltaInfNorm { one_norm_weight, delta_inf_weight } => {
                one_norm_weight * one + delta_inf_weight * dinf
            }
            ObjectiveSpec::ExternalQuadratic => u.iter().map(|v| v * v).sum(),
        }
    }

    /// Fill the epigraph variables of a full MILP point from the u part.
    pub fn fill_point(&self, x: &mut [f64], u: &[f64]) {
        if let Some(range) = &self.abs_vars {
            for (slot, val) in range.clone().zip(u.iter()) {
                x[slot] = val.abs();
            }
        }
        if let Some(j) = self.inf_var {
            x[j] = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        }
        if let Some(j) = self.delta_inf_var {
            let mut dinf = 0.0f64;
            for k in 1..self.t {
                for q in 0..self.m_u {
                    dinf = dinf.max((u[k * self.m_u + q] - u[(k - 1) * self.m_u + q]).abs());
                }
            }
            x[j] = dinf;
        }
    }
}

/// Append epigraph variables/rows realizing `spec` over the existing
/// variables `u_vars` and install the linear cost. `ExternalQuadratic`
/// builds no epigraph and tags the problem for an external backend instead.
pub fn encode_objective(
    spec: ObjectiveSpec,
    problem: &mut MilpProblem,
    u_vars: &Range<usize>,
    t: usize,
    m_u: usize,
) -> ObjectiveEncoding {
    let nu = u_vars.len();
    let mut cost: Vec<(usize, f64)> = Vec::new();
    let mut abs_vars = None;
    let mut inf_var = None;
    let mut delta_inf_var = None;
    let mut quadratic = false;

    let mut add_abs = |problem: &mut MilpProblem, cost: &mut Vec<(usize, f64)>, weight: f64| -> Range<usize> {
        let range = problem.add_vars(nu, VarSpec::nonneg());
        for (k, uj) in u_vars.clone().enumerate() {
            let tj = range.start + k;
            problem.add_row(RowSense::Le, 0.0, vec![(uj, 1.0), (tj, -1.0)]);
            problem.add_row(RowSense::Le, 0.0, vec![(uj, -1.0), (tj, -1.0)]);
            cost.push((tj, weight));
        }
        range
    };
    let add_inf = |problem: &mut MilpProblem, cost: &mut Vec<(usize, f64)>, weight: f64| -> usize {
        let tj = problem.add_var(VarSpec::nonneg());
        for uj in u_vars.clone() {
            problem.add_row(RowSense::Le, 0.0, vec![(uj, 1.0), (tj, -1.0)]);
            problem.add_row(RowSense::Le, 0.0, vec![(uj, -1.0), (tj, -1.0)]);
        }
        cost.push((tj, weight));
        tj
    };

    match spec {
        ObjectiveSpec::OneNorm => {
            abs_vars = Some(add_abs(problem, &mut cost, 1.0));
        }
        ObjectiveSpec::InfNorm => {
            inf_var = Some(add_inf(problem, &mut cost, 1.0));
        }
        ObjectiveSpec::WeightedSum { one_norm_weight, inf_norm_weight } => {
            if one_norm_weight > 0.0 {
                abs_vars = Some(add_abs(problem, &mut cost, one_norm_weight));
            }
            if inf_norm_weight > 0.0 {
                inf_var = Some(add_inf(problem, &mut cost, inf_norm_weight));
            }
        }
        ObjectiveSpec::DeltaInfNorm { one_norm_weight, delta_inf_weight } => {
            if one_norm_weight > 0.0 {
                abs_vars = Some(add_abs(problem, &mut cost, one_norm_weight));
            }
            if delta_inf_weight > 0.0 {
                let tj = problem.add_var(VarSpec::nonneg());
                for k in 1..t {
                    for q in 0..m_u {
                        let cur = u_vars.start + k * m_u + q;
                        let prev = u_vars.start + (k - 1) * m_u + q;
                        problem.add_row(RowSense::Le, 0.0, vec![(cur, 1.0), (prev, -1.0), (tj, -1.0)]);
                        problem.add_row(RowSense::Le, 0.0, vec![(cur, -1.0), (prev, 1.0), (tj, -1.0)]);
                    }
                }
                cost.push((tj, delta_inf_weight));
                delta_inf_var = Some(tj);
            }
        }
        ObjectiveSpec::ExternalQuadratic => {
            problem.quadratic = u_vars.clone().map(|j| (j, 1.0)).collect();
            quadratic = true;
        }
    }
    problem.objective = cost;
    ObjectiveEncoding { kind: spec, t, m_u, abs_vars, inf_var, delta_inf_var, quadratic }
}

/// Apply the per-step controlled-input polytope: single-coefficient rows
/// tighten variable bounds, general rows become constraint rows.
fn apply_u_polytope(problem: &mut MilpProblem, u_vars: &Range<usize>, t: usize, u_set: &Polytope) {
    let m_u = u_set.dim();
    for r in 0..u_set.num_rows() {
        let nz: Vec<usize> = (0..m_u).filter(|&q| u_set.h_mat[(r, q)] != 0.0).collect();
        if nz.len() == 1 {
            let q = nz[0];
            let coef = u_set.h_mat[(r, q)];
            let bound = u_set.h_vec[r] / coef;
            for k in 0..t {
                let j = u_vars.start + k * m_u + q;
                if coef > 0.0 {
                    problem.vars[j].ub = problem.vars[j].ub.min(bound);
                } else {
                    problem.vars[j].lb = problem.vars[j].lb.max(bound);
                }
            }
        } else {
            for k in 0..t {
                let coeffs: Vec<(usize, f64)> = nz
                    .iter()
                    .map(|&q| (u_vars.start + k * m_u + q, u_set.h_mat[(r, q)]))
                    .collect();
                problem.add_row(RowSense::Le, u_set.h_vec[r], coeffs);
            }
        }
    }
}

// --------------------------------------------------------------------- //
// Inner problem
// --------------------------------------------------------------------- //

/// Variable map of a built inner LP: δ first, then x̄.
#[derive(Clone, Debug)]
pub struct InnerMeta {
    pub delta_var: usize,
    pub xbar_vars: Range<usize>,
    pub xi: usize,
    pub rho: usize,
    pub kappa: usize,
}

/// Optimum and multipliers of one inner solve. Multipliers follow the
/// inequality blocks: `mu1` for the uncertainty-domain rows, `mu2` for the
/// responsibility rows, `mu3` for the ± difference rows (summing to one).
#[derive(Clone, Debug)]
pub struct InnerSolution {
    pub delta_star: f64,
    pub xbar: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub mu3: Vec<f64>,
}

/// Build the inner LP of a pair at a fixed input: min δ subject to the
/// pair's concatenated inequality system.
pub fn build_inner(pair: &StackedPair, u: &DVector<f64>) -> (MilpProblem, InnerMeta) {
    assert_eq!(u.len(), pair.nu, "input length");
    let mut p = MilpProblem::new(format!("inner-{}-{}", pair.pair.0, pair.pair.1));
    let delta_var = p.add_var(VarSpec::free());
    let xbar_vars = p.add_vars(pair.eta, VarSpec::free());
    let su = &pair.s_mat * u;
    for row in 0..(pair.xi + pair.rho) {
        let mut coeffs: Vec<(usize, f64)> = (0..pair.eta)
            .filter(|&m| pair.r_mat[(row, m)] != 0.0)
            .map(|m| (xbar_vars.start + m, pair.r_mat[(row, m)]))
            .collect();
        if row >= pair.xi {
            coeffs.push((delta_var, -1.0));
        }
        p.add_row(RowSense::Le, pair.r_vec[row] - su[row], coeffs);
    }
    for row in 0..pair.kappa {
        let coeffs: Vec<(usize, f64)> = (0..pair.eta)
            .filter(|&m| pair.h_xbar[(row, m)] != 0.0)
            .map(|m| (xbar_vars.start + m, pair.h_xbar[(row, m)]))
            .collect();
        p.add_row(RowSense::Le, pair.h_xbar_rhs[row], coeffs);
    }
    p.objective = vec![(delta_var, 1.0)];
    (p, InnerMeta { delta_var, xbar_vars, xi: pair.xi, rho: pair.rho, kappa: pair.kappa })
}

/// Solve the inner LP; infeasibility means the pair's uncertainty polytope
/// is empty.
pub fn solve_inner(
    pair: &StackedPair,
    u: &DVector<f64>,
    params: &SolverParams,
) -> Result<InnerSolution, FormulationError> {
    let (problem, meta) = build_inner(pair, u);
    let sol = solve_lp(&problem, params)?;
    match sol.status {
        LpStatus::Optimal => {
            let duals = &sol.duals;
            Ok(InnerSolution {
                delta_star: sol.objective,
                xbar: sol.primal[meta.xbar_vars.clone()].to_vec(),
                mu2: duals[0..meta.xi].to_vec(),
                mu3: duals[meta.xi..meta.xi + meta.rho].to_vec(),
                mu1: duals[meta.xi + meta.rho..meta.xi + meta.rho + meta.kappa].to_vec(),
            })
        }
        LpStatus::Infeasible => {
            Err(FormulationError::UncertaintySetEmpty(pair.pair.0, pair.pair.1))
        }
        LpStatus::Unbounded => Err(FormulationError::Solve(SolveError::Numerical(
            "inner LP unbounded; difference rows missing".into(),
        ))),
    }
}

// --------------------------------------------------------------------- //
// Exact design MILP (KKT + SOS-1)
// --------------------------------------------------------------------- //

/// Variable layout of one pair block inside the exact MILP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairLayout {
    pub pair: (usize, usize),
    pub delta: usize,
    pub xbar: Range<usize>,
    pub mu1: Range<usize>,
    pub mu2: Range<usize>,
    pub mu3: Range<usize>,
    pub s1: Range<usize>,
    pub s2: Range<usize>,
    pub s3: Range<usize>,
}

/// Layout of the full exact MILP: who is who among the variables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactAssembly {
    pub u_vars: Range<usize>,
    pub pairs: Vec<PairLayout>,
    pub objective: ObjectiveEncoding,
}

/// Assemble the exact design MILP over the given (retained) pairs.
///
/// Per pair the variables are (δ, x̄, μ1, μ2, μ3, s1, s2, s3) with the
/// slacks equal to the negated inequality residuals, the KKT stationarity
/// and dual-sum equalities, and one SOS-1 group per (dual, slack) pair.
/// δ carries its separability lower bound ε directly.
pub fn build_exact(scenario: &Scenario, pairs: &[StackedPair]) -> (MilpProblem, ExactAssembly) {
    let t = scenario.horizon;
    let m_u = scenario.m_u();
    let nu = t * m_u;
    let mut p = MilpProblem::new("exact-design");
    let u_vars = p.add_vars(nu, VarSpec::free());
    apply_u_polytope(&mut p, &u_vars, t, &scenario.u_set);

    let mut layouts = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let delta = p.add_var(VarSpec::continuous(scenario.epsilon, f64::INFINITY));
        let xbar = p.add_vars(pair.eta, VarSpec::free());
        let mu1 = p.add_vars(pair.kappa, VarSpec::nonneg());
        let mu2 = p.add_vars(pair.xi, VarSpec::nonneg());
        let mu3 = p.add_vars(pair.rho, VarSpec::nonneg());
        let s1 = p.add_vars(pair.kappa, VarSpec::nonneg());
        let s2 = p.add_vars(pair.xi, VarSpec::nonneg());
        let s3 = p.add_vars(pair.rho, VarSpec::nonneg());

        // Stationarity: for each x̄ column, H_x̄' μ1 + R' [μ2; μ3] = 0.
        for m in 0..pair.eta {
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for i in 0..pair.kappa {
                let c = pair.h_xbar[(i, m)];
                if c != 0.0 {
                    coeffs.push((mu1.start + i, c));
                }
            }
            for j in 0..pair.xi {
                let c = pair.r_mat[(j, m)];
                if c != 0.0 {
                    coeffs.push((mu2.start + j, c));
                }
            }
            for j in 0..pair.rho {
                let c = pair.r_mat[(pair.xi + j, m)];
                if c != 0.0 {
                    coeffs.push((mu3.start + j, c));
                }
            }
            p.add_row(RowSense::Eq, 0.0, coeffs);
        }
        // Stationarity in δ: 1 - Σ μ3 = 0.
        p.add_row(RowSense::Eq, 1.0, (0..pair.rho).map(|j| (mu3.start + j, 1.0)).collect());

        // Slack definitions (primal feasibility).
        for i in 0..pair.kappa {
            let mut coeffs: Vec<(usize, f64)> = (0..pair.eta)
                .filter(|&m| pair.h_xbar[(i, m)] != 0.0)
                .map(|m| (xbar.start + m, pair.h_xbar[(i, m)]))
                .collect();
            coeffs.push((s1.start + i, 1.0));
            p.add_row(RowSense::Eq, pair.h_xbar_rhs[i], coeffs);
        }
        for j in 0..pair.xi {
            let mut coeffs: Vec<(usize, f64)> = (0..pair.eta)
                .filter(|&m| pair.r_mat[(j, m)] != 0.0)
                .map(|m| (xbar.start + m, pair.r_mat[(j, m)]))
                .collect();
            for k in 0..nu {
                let c = pair.s_mat[(j, k)];
                if c != 0.0 {
                    coeffs.push((u_vars.start + k, c));
                }
            }
            coeffs.push((s2.start + j, 1.0));
            p.add_row(RowSense::Eq, pair.r_vec[j], coeffs);
        }
        for j in 0..pair.rho {
            let row = pair.xi + j;
            let mut coeffs: Vec<(usize, f64)> = (0..pair.eta)
                .filter(|&m| pair.r_mat[(row, m)] != 0.0)
                .map(|m| (xbar.start + m, pair.r_mat[(row, m)]))
                .collect();
            for k in 0..nu {
                let c = pair.s_mat[(row, k)];
                if c != 0.0 {
                    coeffs.push((u_vars.start + k, c));
                }
            }
            coeffs.push((delta, -1.0));
            coeffs.push((s3.start + j, 1.0));
            p.add_row(RowSense::Eq, pair.r_vec[row], coeffs);
        }

        // Complementary slackness as SOS-1 pairs. Branching resolves the
        // ± difference rows first (they pin which output instants carry the
        // inner optimum), then responsibility rows, then domain rows.
        for i in 0..pair.kappa {
            p.add_sos1(vec![mu1.start + i, s1.start + i]);
            p.sos_priorities.push(0);
        }
        for j in 0..pair.xi {
            p.add_sos1(vec![mu2.start + j, s2.start + j]);
            p.sos_priorities.push(1);
        }
        for j in 0..pair.rho {
            p.add_sos1(vec![mu3.start + j, s3.start + j]);
            p.sos_priorities.push(2);
        }

        layouts.push(PairLayout { pair: pair.pair, delta, xbar, mu1, mu2, mu3, s1, s2, s3 });
    }
    let objective = encode_objective(scenario.objective, &mut p, &u_vars, t, m_u);
    (p, ExactAssembly { u_vars, pairs: layouts, objective })
}

// --------------------------------------------------------------------- //
// Conservative design MILP (robust rows dualized)
// --------------------------------------------------------------------- //

/// Index key of one ± difference row: which pair, sign side, time, output.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SeparationRowKey {
    pub pair_index: usize,
    pub pair: (usize, usize),
    /// 1 for +(z_i - z_j), 2 for the negated side.
    pub alpha: u8,
    pub k: usize,
    pub l: usize,
}

/// Layout and certificates of the conservative MILP.
///
/// `pi` holds one dual column per robust row (rows(Φ) × rows(R)),
/// satisfying `Φ' π_j = R_j'` with `π_j >= 0` and `π_j' φ = hstar[j]`; the
/// MILP itself carries only u, s and a after the row-wise dualization.
#[derive(Clone, Debug)]
pub struct ConservativeAssembly {
    pub u_vars: Range<usize>,
    pub s_vars: Range<usize>,
    pub a_vars: Range<usize>,
    pub row_keys: Vec<SeparationRowKey>,
    pub pi: nalgebra::DMatrix<f64>,
    /// Robust row maxima: hstar[j] = max R_j x̄ over the uncertainty domain.
    pub hstar: Vec<f64>,
    pub suboptimal_warning: bool,
    pub objective: ObjectiveEncoding,
}

/// Assemble the conservative MILP from the all-model stack.
///
/// Every robust constraint row `R_j x̄ <= r_j(u, s)` for all admissible x̄
/// is dualized independently: the minimal dual objective `π_j' φ` equals
/// `max R_j x̄` by strong duality, so the MILP keeps only the scalar
/// comparison per row while `pi` retains the certificates. When
/// `P̄_y Γ_yu != 0` the u-dependent domain bound ψ(u) is replaced by its
/// constant part φ and the assembly flags the possible suboptimality.
pub fn build_conservative(
    scenario: &Scenario,
    global: &StackedGlobal,
) -> Result<(MilpProblem, ConservativeAssembly), FormulationError> {
    let t = scenario.horizon;
    let m_u = scenario.m_u();
    let nu = t * m_u;
    let p_out = scenario.p();
    let zp = (t + 1) * p_out;
    let pairs = scenario.pairs();
    let n_pairs = pairs.len();
    let rho = 2 * n_pairs * zp;
    let params = SolverParams::default();

    let r_mat = global.r_mat();
    let phi = global.phi_mat();
    let phi_rhs = global.phi_rhs();
    let n_xbar = global.eta;
    let warning = global.suboptimality_norm() > 1e-12;

    // Row-wise duals: max R_j x̄ over Φ x̄ <= φ.
    let mut base = MilpProblem::new("robust-row");
    base.add_vars(n_xbar, VarSpec::free());
    for r in 0..phi.nrows() {
        let coeffs: Vec<(usize, f64)> =
            (0..n_xbar).filter(|&m| phi[(r, m)] != 0.0).map(|m| (m, phi[(r, m)])).collect();
        base.add_row(RowSense::Le, phi_rhs[r], coeffs);
    }
    let mut hstar = vec![0.0f64; r_mat.nrows()];
    let mut pi = nalgebra::DMatrix::zeros(phi.nrows(), r_mat.nrows());
    for j in 0..r_mat.nrows() {
        let mut lp = base.clone();
        lp.objective = (0..n_xbar)
            .filter(|&m| r_mat[(j, m)] != 0.0)
            .map(|m| (m, -r_mat[(j, m)]))
            .collect();
        let sol = solve_lp(&lp, &params)?;
        match sol.status {
            LpStatus::Optimal => {
                hstar[j] = -sol.objective;
                for r in 0..phi.nrows() {
                    pi[(r, j)] = sol.duals[r];
                }
            }
            LpStatus::Unbounded => {
                hstar[j] = f64::INFINITY;
            }
            LpStatus::Infeasible => {
                hstar[j] = f64::NEG_INFINITY;
            }
        }
    }

    // MILP: u, slack s and binary a per ± difference row.
    let mut p = MilpProblem::new("conservative-design");
    let u_vars = p.add_vars(nu, VarSpec::free());
    apply_u_polytope(&mut p, &u_vars, t, &scenario.u_set);
    let s_vars = p.add_vars(rho, VarSpec::nonneg());
    let a_vars = p.add_vars(rho, VarSpec::binary());

    let mut row_keys = Vec::with_capacity(rho);
    for alpha in [1u8, 2u8] {
        for (q, &pr) in pairs.iter().enumerate() {
            for k in 0..=t {
                for l in 0..p_out {
                    row_keys.push(SeparationRowKey { pair_index: q, pair: pr, alpha, k, l });
                }
            }
        }
    }

    // Robust separation rows: hstar_j <= -λ_j(u, s)
    //   <=>  -(λ u-coef)_j · u - s_j <= -λ const_j - hstar_j.
    for j in 0..rho {
        if hstar[j] == f64::NEG_INFINITY {
            continue; // vacuous: empty uncertainty domain
        }
        if hstar[j] == f64::INFINITY {
            // No dual certificate exists; this row can never witness
            // separation.
            p.vars[a_vars.start + j].ub = 0.0;
            continue;
        }
        let mut coeffs: Vec<(usize, f64)> = (0..nu)
            .filter(|&c| global.lambda_u[(j, c)] != 0.0)
            .map(|c| (u_vars.start + c, -global.lambda_u[(j, c)]))
            .collect();
        coeffs.push((s_vars.start + j, -1.0));
        p.add_row(RowSense::Le, -global.lambda_const[j] - hstar[j], coeffs);
    }
    // Robust x-responsibility rows: hstar <= h_x const - S_x u.
    for (r, j) in (rho..r_mat.nrows()).enumerate() {
        if hstar[j] == f64::NEG_INFINITY {
            continue;
        }
        if hstar[j] == f64::INFINITY {
            // The input cannot robustly keep the controlled partition
            // inside its responsibility set.
            p.add_row(RowSense::Le, -1.0, vec![]);
            continue;
        }
        let coeffs: Vec<(usize, f64)> = (0..nu)
            .filter(|&c| global.s_x[(r, c)] != 0.0)
            .map(|c| (u_vars.start + c, global.s_x[(r, c)]))
            .collect();
        p.add_row(RowSense::Le, global.h_x_const[r] - hstar[j], coeffs);
    }
    // Per-pair coverage and SOS-1 pairs.
    for q in 0..n_pairs {
        let mut coeffs = Vec::with_capacity(2 * zp);
        for alpha in 0..2 {
            let base_row = alpha * n_pairs * zp + q * zp;
            for w in 0..zp {
                coeffs.push((a_vars.start + base_row + w, -1.0));
            }
        }
        p.add_row(RowSense::Le, -1.0, coeffs);
    }
    for j in 0..rho {
        p.add_sos1(vec![s_vars.start + j, a_vars.start + j]);
    }
    let objective = encode_objective(scenario.objective, &mut p, &u_vars, t, m_u);

    Ok((
        p,
        ConservativeAssembly {
            u_vars,
            s_vars,
            a_vars,
            row_keys,
            pi,
            hstar,
            suboptimal_warning: warning,
            objective,
        },
    ))
}

// --------------------------------------------------------------------- //
// Pair elimination
// --------------------------------------------------------------------- //

/// Outcome of the preprocessing feasibility tests.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EliminationResult {
    pub retained: Vec<(usize, usize)>,
    pub eliminated: Vec<(usize, usize)>,
    /// Strictness margin used for δ < ε.
    pub tol_strict: f64,
}

/// For each pair, check whether some admissible input leaves the pair's
/// worst-case separation below ε (LP feasibility over u, δ, x̄ jointly).
/// Infeasibility proves the pair separates under every admissible input, so
/// its constraints can be dropped from the exact design.
pub fn pair_elimination(
    scenario: &Scenario,
    pairs: &[StackedPair],
    params: &SolverParams,
) -> Result<EliminationResult, FormulationError> {
    let t = scenario.horizon;
    let m_u = scenario.m_u();
    let nu = t * m_u;
    let tol_strict = 1e-6 * scenario.epsilon.max(1.0);
    let mut retained = Vec::new();
    let mut eliminated = Vec::new();
    for pair in pairs {
        let mut p = MilpProblem::new(format!("eliminate-{}-{}", pair.pair.0, pair.pair.1));
        let u_vars = p.add_vars(nu, VarSpec::free());
        apply_u_polytope(&mut p, &u_vars, t, &scenario.u_set);
        let delta = p.add_var(VarSpec::continuous(f64::NEG_INFINITY, scenario.epsilon - tol_strict));
        let xbar = p.add_vars(pair.eta, VarSpec::free());
        for row in 0..(pair.xi + pair.rho) {
            let mut coeffs: Vec<(usize, f64)> = (0..pair.eta)
                .filter(|&m| pair.r_mat[(row, m)] != 0.0)
                .map(|m| (xbar.start + m, pair.r_mat[(row, m)]))
                .collect();
            for k in 0..nu {
                let c = pair.s_mat[(row, k)];
                if c != 0.0 {
                    coeffs.push((u_vars.start + k, c));
                }
            }
            if row >= pair.xi {
                coeffs.push((delta, -1.0));
            }
            p.add_row(RowSense::Le, pair.r_vec[row], coeffs);
        }
        for row in 0..pair.kappa {
            let coeffs: Vec<(usize, f64)> = (0..pair.eta)
                .filter(|&m| pair.h_xbar[(row, m)] != 0.0)
                .map(|m| (xbar.start + m, pair.h_xbar[(row, m)]))
                .collect();
            p.add_row(RowSense::Le, pair.h_xbar_rhs[row], coeffs);
        }
        let sol = solve_lp(&p, params)?;
        match sol.status {
            LpStatus::Infeasible => eliminated.push(pair.pair),
            _ => retained.push(pair.pair),
        }
    }
    Ok(EliminationResult { retained, eliminated, tol_strict })
}

// --------------------------------------------------------------------- //
// Design verification
// --------------------------------------------------------------------- //

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairSeparation {
    pub pair: (usize, usize),
    pub delta_star: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub separations: Vec<PairSeparation>,
    pub epsilon: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Re-solve every pair's inner LP at a candidate input and compare the
/// worst-case separations against ε.
pub fn verify_design(
    scenario: &Scenario,
    pairs: &[StackedPair],
    u_star: &DVector<f64>,
    params: &SolverParams,
) -> Result<VerifyReport, FormulationError> {
    let tol = 1e-6 * scenario.epsilon.max(1.0);
    let mut separations = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let inner = solve_inner(pair, u_star, params)?;
        separations.push(PairSeparation {
            pair: pair.pair,
            delta_star: inner.delta_star,
            pass: inner.delta_star >= scenario.epsilon - tol,
        });
    }
    let pass = separations.iter().all(|s| s.pass);
    Ok(VerifyReport { separations, epsilon: scenario.epsilon, tol, pass })
}

// --------------------------------------------------------------------- //
// Complexity accounting
// --------------------------------------------------------------------- //

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct FormulaCounts {
    pub sos1: usize,
    pub binaries: usize,
    pub continuous: usize,
}

/// Problem-size inputs (homogeneous counts taken from the first model).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ComplexityInputs {
    pub c_0: usize,
    pub c_d: usize,
    pub c_w: usize,
    pub c_v: usize,
    pub c_x: usize,
    pub c_y: usize,
    pub c_u: usize,
    pub n: usize,
    pub m_d: usize,
    pub m_w: usize,
    pub m_v: usize,
    pub p: usize,
    pub t: usize,
    pub pairs: usize,
    pub n_u: usize,
}

/// Closed-form counts in the style of the complexity table, next to the
/// counts measured on actually built problems. The closed forms count v
/// over T steps while the build constrains it at all T+1 output instants,
/// and the built exact MILP carries explicit slack variables, so measured
/// totals exceed the closed forms by design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub inputs: ComplexityInputs,
    pub exact_closed_form: FormulaCounts,
    pub conservative_closed_form: FormulaCounts,
    pub exact_measured: FormulaCounts,
    pub conservative_measured: FormulaCounts,
}

fn measure(p: &MilpProblem) -> FormulaCounts {
    let binaries = p.vars.iter().filter(|v| v.kind == crate::solver::VarKind::Binary).count();
    FormulaCounts {
        sos1: p.sos1_groups.len(),
        binaries,
        continuous: p.vars.len() - binaries,
    }
}

/// Closed-form and measured size accounting for both formulations.
pub fn complexity_report(scenario: &Scenario) -> Result<ComplexityReport, FormulationError> {
    let t = scenario.horizon;
    let first = &scenario.models[0];
    let inputs = ComplexityInputs {
        c_0: scenario.x0_set.num_rows(),
        c_d: first.d_set.num_rows(),
        c_w: scenario.w_set.num_rows(),
        c_v: scenario.v_set.num_rows(),
        c_x: first.x_set.num_rows(),
        c_y: first.y_set.num_rows(),
        c_u: scenario.u_set.num_rows(),
        n: scenario.n(),
        m_d: first.m_d,
        m_w: scenario.m_w(),
        m_v: scenario.m_v(),
        p: scenario.p(),
        t,
        pairs: scenario.pair_count(),
        n_u: scenario.m_u(),
    };
    let i2 = 2 * inputs.pairs;
    let tp1 = t + 1;
    let c_1 = inputs.n + t * (inputs.m_d + inputs.m_w + inputs.m_v);
    let c_2 = inputs.c_0 + t * (inputs.c_d + inputs.c_w + inputs.c_v);
    let c_3 = c_2 + t * (inputs.c_x + inputs.c_y);
    let exact_closed_form = FormulaCounts {
        sos1: i2 * (c_3 + tp1 * inputs.p),
        binaries: 0,
        continuous: i2 * (c_3 + tp1 * inputs.p) + t * inputs.n_u + i2 * c_1 + inputs.pairs,
    };
    let cons_sos = i2 * tp1 * inputs.p;
    let conservative_closed_form = FormulaCounts {
        sos1: cons_sos,
        binaries: cons_sos,
        continuous: cons_sos
            + t * inputs.n_u
            + scenario.num_models() * (c_2 + t * inputs.c_y)
                * (scenario.num_models() * t * inputs.c_x + cons_sos),
    };

    let pairs: Vec<StackedPair> =
        scenario.pairs().iter().map(|&(i, j)| stack_pair(scenario, i, j)).collect();
    let (exact_problem, _) = build_exact(scenario, &pairs);
    let global = stack_all(scenario);
    let (cons_problem, _) = build_conservative(scenario, &global)?;
    Ok(ComplexityReport {
        inputs,
        exact_closed_form,
        conservative_closed_form,
        exact_measured: measure(&exact_problem),
        conservative_measured: measure(&cons_problem),
    })
}

// --------------------------------------------------------------------- //
// Design orchestration
// --------------------------------------------------------------------- //

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormulationKind {
    Exact,
    Conservative,
}

/// Outcome of a design run: the input sequence, its cost, the per-pair
/// worst-case separations at that input and bookkeeping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DesignResult {
    pub formulation: FormulationKind,
    pub objective_kind: ObjectiveSpec,
    pub status: MilpStatus,
    pub objective: Option<f64>,
    pub u_star: Option<Vec<f64>>,
    pub separations: Option<VerifyReport>,
    pub retained_pairs: Vec<(usize, usize)>,
    pub eliminated_pairs: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
    pub node_count: u64,
    pub wall_time_seconds: f64,
    pub best_bound: f64,
}

/// Solution engine for the exact design.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactEngine {
    /// Certified branch-and-bound over the input box with inner-LP probes
    /// and affine infeasibility certificates. Proves global optimality of
    /// the bilevel design directly.
    #[default]
    BilevelCertified,
    /// Solve the assembled KKT/SOS-1 MILP with the generic kernel. The
    /// relaxation bound of complementarity systems is weak, so closing the
    /// tree can take far longer; intended for small instances and
    /// cross-checks.
    MilpBranchAndBound,
}

#[derive(Clone, Debug, Default)]
pub struct ExactOptions {
    pub eliminate: bool,
    /// Solve the conservative design first and offer its input as an
    /// incumbent seed (it is separating whenever it exists).
    pub seed_from_conservative: bool,
    /// Externally proven lower bound on the optimum, forwarded to the MILP
    /// engine.
    pub known_lower_bound: Option<f64>,
    pub engine: ExactEngine,
}

/// Solve the conservative design.
pub fn design_conservative(
    scenario: &Scenario,
    params: &SolverParams,
    node_log: Option<Box<dyn Write + '_>>,
) -> Result<DesignResult, FormulationError> {
    let global = stack_all(scenario);
    let (problem, assembly) = build_conservative(scenario, &global)?;
    if problem.is_quadratic() {
        return Err(FormulationError::Solve(SolveError::UnsupportedObjective));
    }
    let hooks = SolveHooks { incumbent: None, node_log, incumbent_every: 0, known_lower_bound: None };
    let sol = solve_milp_ext(&problem, params, hooks)?;
    let mut warnings = Vec::new();
    if assembly.suboptimal_warning {
        warnings.push(
            "P_y * Gamma_yu != 0: the conservative design replaces the u-dependent domain bound by its constant part; its solution may be sub-optimal"
                .to_string(),
        );
    }
    finish_design(
        scenario,
        FormulationKind::Conservative,
        sol,
        assembly.u_vars.clone(),
        &assembly.objective,
        scenario.pairs(),
        Vec::new(),
        warnings,
        params,
    )
}

/// Solve the exact design, optionally after pair elimination, with the
/// bilevel rounding heuristic supplying incumbents.
pub fn design_exact(
    scenario: &Scenario,
    params: &SolverParams,
    options: &ExactOptions,
    node_log: Option<Box<dyn Write + '_>>,
) -> Result<DesignResult, FormulationError> {
    let all_pairs: Vec<StackedPair> =
        scenario.pairs().iter().map(|&(i, j)| stack_pair(scenario, i, j)).collect();
    let (retained, eliminated) = if options.eliminate {
        let result = pair_elimination(scenario, &all_pairs, params)?;
        let kept: Vec<StackedPair> = all_pairs
            .iter()
            .filter(|p| result.retained.contains(&p.pair))
            .cloned()
            .collect();
        (kept, result.eliminated)
    } else {
        (all_pairs, Vec::new())
    };

    let (problem, assembly) = build_exact(scenario, &retained);
    if problem.is_quadratic() {
        return Err(FormulationError::Solve(SolveError::UnsupportedObjective));
    }

    // Conservative input as a candidate incumbent: it separates whenever it
    // exists, so it hands the search an upper bound immediately.
    let mut seed_u: Option<Vec<f64>> = None;
    if options.seed_from_conservative {
        if let Ok(cons) = design_conservative(scenario, params, None) {
            // Any conservative input will do as a seed: the search
            // re-validates separation before accepting an incumbent.
            seed_u = cons.u_star;
        }
    }

    let sol = match options.engine {
        ExactEngine::BilevelCertified => {
            let outcome = bilevel_search(
                scenario,
                &retained,
                &assembly.objective,
                params,
                seed_u.as_deref(),
            )?;
            let (primal, objective) = match outcome.incumbent {
                Some((u, value)) => {
                    // Embed the input into a full-length vector so that
                    // finish_design can slice it uniformly.
                    let mut x = vec![0.0; problem.num_vars()];
                    x[assembly.u_vars.clone()].copy_from_slice(&u);
                    (Some(x), Some(value))
                }
                None => (None, None),
            };
            MilpSolution {
                status: outcome.status,
                objective,
                primal,
                best_bound: outcome.best_bound,
                node_count: outcome.boxes,
                wall_time_seconds: outcome.wall,
            }
        }
        ExactEngine::MilpBranchAndBound => {
            let rounding = RoundingHeuristic {
                scenario,
                pairs: &retained,
                assembly: &assembly,
                params,
                n_vars: problem.num_vars(),
                seed_u,
                seed_used: std::cell::Cell::new(false),
            };
            let hooks = SolveHooks {
                incumbent: Some(Box::new(|relax: &[f64]| rounding.try_round(relax))),
                node_log,
                incumbent_every: 64,
                known_lower_bound: options.known_lower_bound,
            };
            solve_milp_ext(&problem, params, hooks)?
        }
    };
    finish_design(
        scenario,
        FormulationKind::Exact,
        sol,
        assembly.u_vars.clone(),
        &assembly.objective,
        retained.iter().map(|p| p.pair).collect(),
        eliminated,
        Vec::new(),
        params,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_design(
    scenario: &Scenario,
    formulation: FormulationKind,
    sol: MilpSolution,
    u_vars: Range<usize>,
    encoding: &ObjectiveEncoding,
    retained: Vec<(usize, usize)>,
    eliminated: Vec<(usize, usize)>,
    mut warnings: Vec<String>,
    params: &SolverParams,
) -> Result<DesignResult, FormulationError> {
    let u_star = sol.primal.as_ref().map(|x| x[u_vars].to_vec());
    let separations = match &u_star {
        Some(u) => {
            let uv = DVector::from_column_slice(u);
            let pairs: Vec<StackedPair> =
                scenario.pairs().iter().map(|&(i, j)| stack_pair(scenario, i, j)).collect();
            let report = verify_design(scenario, &pairs, &uv, params)?;
            if !report.pass {
                warnings.push("designed input fails verification on at least one pair".to_string());
            }
            Some(report)
        }
        None => None,
    };
    let objective = u_star.as_ref().map(|u| encoding.evaluate(u));
    Ok(DesignResult {
        formulation,
        objective_kind: encoding.kind,
        status: sol.status,
        objective,
        u_star,
        separations,
        retained_pairs: retained,
        eliminated_pairs: eliminated,
        warnings,
        node_count: sol.node_count,
        wall_time_seconds: sol.wall_time_seconds,
        best_bound: sol.best_bound,
    })
}

/// Bilevel rounding: evaluate δ*(u) for a candidate input by solving the
/// true inner LPs; if every pair separates, assemble the full KKT-feasible
/// MILP point from the inner primal/dual solutions.
struct RoundingHeuristic<'a> {
    scenario: &'a Scenario,
    pairs: &'a [StackedPair],
    assembly: &'a ExactAssembly,
    params: &'a SolverParams,
    n_vars: usize,
    seed_u: Option<Vec<f64>>,
    seed_used: std::cell::Cell<bool>,
}

impl<'a> RoundingHeuristic<'a> {
    fn try_round(&self, relax: &[f64]) -> Option<(Vec<f64>, f64)> {
        let mut candidates: Vec<Vec<f64>> = vec![relax[self.assembly.u_vars.clone()].to_vec()];
        if !self.seed_used.get() {
            if let Some(seed) = &self.seed_u {
                candidates.push(seed.clone());
                self.seed_used.set(true);
            }
        }
        let mut best: Option<(Vec<f64>, f64)> = None;
        for u in candidates {
            if !self.separates(&u) {
                continue;
            }
            // Shrink along the ray: the worst-case separation of each pair
            // is convex in the input, so the feasible scale factors form an
            // interval ending at 1 and bisection finds its left edge. Then
            // try zeroing small coordinates (re-polishing each time), which
            // matters for sparsity-rewarding objectives.
            let polished = self.sparsify_polish(self.scale_polish(&u));
            if let Some((point, value)) = self.assemble_point(&polished) {
                if best.as_ref().map_or(true, |(_, b)| value < *b) {
                    best = Some((point, value));
                }
            }
        }
        best
    }

    fn separates(&self, u: &[f64]) -> bool {
        separates_all(self.pairs, u, self.scenario.epsilon, self.params)
    }

    fn sparsify_polish(&self, u: Vec<f64>) -> Vec<f64> {
        sparsify_polish(self.pairs, &self.assembly.objective, u, self.scenario.epsilon, self.params)
    }

    fn scale_polish(&self, u: &[f64]) -> Vec<f64> {
        scale_polish(self.pairs, u, self.scenario.epsilon, self.params)
    }

    fn assemble_point(&self, u: &[f64]) -> Option<(Vec<f64>, f64)> {
        let uv = DVector::from_column_slice(u);
        let eps = self.scenario.epsilon;
        let tol = 1e-9 * eps.max(1.0);
        let mut x = vec![0.0; self.n_vars];
        x[self.assembly.u_vars.clone()]
            .iter_mut()
            .zip(u.iter())
            .for_each(|(slot, &v)| *slot = v);
        for (pair, layout) in self.pairs.iter().zip(&self.assembly.pairs) {
            let inner = solve_inner(pair, &uv, self.params).ok()?;
            if inner.delta_star < eps - tol {
                return None;
            }
            x[layout.delta] = inner.delta_star.max(eps);
            x[layout.xbar.clone()].copy_from_slice(&inner.xbar);
            x[layout.mu1.clone()].copy_from_slice(&inner.mu1);
            x[layout.mu2.clone()].copy_from_slice(&inner.mu2);
            x[layout.mu3.clone()].copy_from_slice(&inner.mu3);
            // Slacks are the negated residuals at the inner optimum.
            let su = &pair.s_mat * &uv;
            let xbarv = DVector::from_column_slice(&inner.xbar);
            let rx = &pair.r_mat * &xbarv;
            let hx = &pair.h_xbar * &xbarv;
            for i in 0..pair.kappa {
                x[layout.s1.start + i] = (pair.h_xbar_rhs[i] - hx[i]).max(0.0);
            }
            for j in 0..pair.xi {
                x[layout.s2.start + j] = (pair.r_vec[j] - su[j] - rx[j]).max(0.0);
            }
            for j in 0..pair.rho {
                let row = pair.xi + j;
                x[layout.s3.start + j] = (x[layout.delta] + pair.r_vec[row] - su[row] - rx[row]).max(0.0);
            }
            // Force exact complementarity: zero the smaller member of every
            // (dual, slack) pair; the induced equality-residual error stays
            // within the solver's acceptance tolerance.
            let clean = |x: &mut [f64], mu_at: usize, s_at: usize, count: usize| {
                for idx in 0..count {
                    if x[mu_at + idx].abs() > x[s_at + idx].abs() {
                        x[s_at + idx] = 0.0;
                    } else {
                        x[mu_at + idx] = 0.0;
                    }
                }
            };
            clean(&mut x, layout.mu1.start, layout.s1.start, pair.kappa);
            clean(&mut x, layout.mu2.start, layout.s2.start, pair.xi);
            clean(&mut x, layout.mu3.start, layout.s3.start, pair.rho);
        }
        self.assembly.objective.fill_point(&mut x, u);
        let value = self.assembly.objective.evaluate(u);
        Some((x, value))
    }
}

// --------------------------------------------------------------------- //
// Certified bilevel search over the input box
// --------------------------------------------------------------------- //

/// Shared feasibility predicate: every pair separates at `u`.
fn separates_all(
    pairs: &[StackedPair],
    u: &[f64],
    epsilon: f64,
    params: &SolverParams,
) -> bool {
    let uv = DVector::from_column_slice(u);
    let tol = 1e-9 * epsilon.max(1.0);
    pairs
        .iter()
        .all(|pair| solve_inner(pair, &uv, params).map_or(false, |s| s.delta_star >= epsilon - tol))
}

/// Shrink a separating input along its ray; the per-pair worst-case
/// separation is convex in u, so bisection finds the smallest feasible
/// scale.
fn scale_polish(
    pairs: &[StackedPair],
    u: &[f64],
    epsilon: f64,
    params: &SolverParams,
) -> Vec<f64> {
    let scaled = |alpha: f64| -> Vec<f64> { u.iter().map(|&v| alpha * v).collect() };
    if separates_all(pairs, &scaled(0.0), epsilon, params) {
        return scaled(0.0);
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if separates_all(pairs, &scaled(mid), epsilon, params) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    scaled(hi)
}

/// Try zeroing coordinates (smallest magnitude first), re-polishing each
/// time; repeats until no single zeroing improves the cost.
fn sparsify_polish(
    pairs: &[StackedPair],
    encoding: &ObjectiveEncoding,
    mut u: Vec<f64>,
    epsilon: f64,
    params: &SolverParams,
) -> Vec<f64> {
    let mut value = encoding.evaluate(&u);
    loop {
        let mut order: Vec<usize> = (0..u.len()).filter(|&j| u[j] != 0.0).collect();
        order.sort_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()).then(a.cmp(&b)));
        let mut improved = false;
        for j in order {
            let mut candidate = u.clone();
            candidate[j] = 0.0;
            if !separates_all(pairs, &candidate, epsilon, params) {
                continue;
            }
            let candidate = scale_polish(pairs, &candidate, epsilon, params);
            let cand_value = encoding.evaluate(&candidate);
            if cand_value < value - 1e-12 {
                u = candidate;
                value = cand_value;
                improved = true;
                break;
            }
        }
        if !improved {
            return u;
        }
    }
}

/// Infeasibility certificate for one pair over a box: a single adversary
/// realization that keeps every inner-problem row satisfied for every input
/// in the box simultaneously (each row taken at its box-worst input) with a
/// separation bound below the acceptance threshold. Its existence proves no
/// input in the box separates the pair, up to the probe's acceptance band.
fn box_certificate(
    pair: &StackedPair,
    lo: &[f64],
    hi: &[f64],
    epsilon: f64,
    params: &SolverParams,
) -> Result<bool, FormulationError> {
    let nu = pair.nu;
    let band = 1e-9 * epsilon.max(1.0);
    let mut p = MilpProblem::new("box-certificate");
    let delta_var = p.add_var(VarSpec::free());
    let xbar_vars = p.add_vars(pair.eta, VarSpec::free());
    for row in 0..(pair.xi + pair.rho) {
        let mut coeffs: Vec<(usize, f64)> = (0..pair.eta)
            .filter(|&m| pair.r_mat[(row, m)] != 0.0)
            .map(|m| (xbar_vars.start + m, pair.r_mat[(row, m)]))
            .collect();
        if row >= pair.xi {
            coeffs.push((delta_var, -1.0));
        }
        let mut worst = 0.0;
        for q in 0..nu {
            let c = pair.s_mat[(row, q)];
            worst += (c * lo[q]).max(c * hi[q]);
        }
        p.add_row(RowSense::Le, pair.r_vec[row] - worst, coeffs);
    }
    for row in 0..pair.kappa {
        let coeffs: Vec<(usize, f64)> = (0..pair.eta)
            .filter(|&m| pair.h_xbar[(row, m)] != 0.0)
            .map(|m| (xbar_vars.start + m, pair.h_xbar[(row, m)]))
            .collect();
        p.add_row(RowSense::Le, pair.h_xbar_rhs[row], coeffs);
    }
    p.objective = vec![(delta_var, 1.0)];
    let sol = solve_lp(&p, params)?;
    Ok(sol.status == LpStatus::Optimal && sol.objective < epsilon - band)
}

/// Outcome of the certified search.
struct BilevelOutcome {
    status: MilpStatus,
    incumbent: Option<(Vec<f64>, f64)>,
    best_bound: f64,
    boxes: u64,
    wall: f64,
}

/// Global branch-and-bound over the admissible input region.
///
/// Boxes are fathomed three ways: the box's minimal cost meets the
/// incumbent (bound), the cost minimizer itself separates every pair (the
/// box cannot contain anything better), or some pair carries an affine
/// infeasibility certificate over the whole box. Splitting is on the
/// relatively widest coordinate through the cost minimizer. The search is
/// exact: any surviving region keeps its cost lower bound in the reported
/// gap.
fn bilevel_search(
    scenario: &Scenario,
    pairs: &[StackedPair],
    encoding: &ObjectiveEncoding,
    params: &SolverParams,
    seed: Option<&[f64]>,
) -> Result<BilevelOutcome, FormulationError> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;
    use std::time::Instant;

    let start = Instant::now();
    let t = scenario.horizon;
    let m_u = scenario.m_u();
    let nu = t * m_u;
    let epsilon = scenario.epsilon;

    // Cost template: u with its polytope plus the objective epigraph.
    let mut template = MilpProblem::new("bilevel-cost");
    let u_vars = template.add_vars(nu, VarSpec::free());
    apply_u_polytope(&mut template, &u_vars, t, &scenario.u_set);
    let _ = encode_objective(scenario.objective, &mut template, &u_vars, t, m_u);
    let root_lo: Vec<f64> = (0..nu).map(|j| template.vars[j].lb).collect();
    let root_hi: Vec<f64> = (0..nu).map(|j| template.vars[j].ub).collect();
    let root_width: Vec<f64> =
        (0..nu).map(|j| (root_hi[j] - root_lo[j]).max(1e-12)).collect();
    if root_width.iter().any(|w| !w.is_finite()) {
        return Err(FormulationError::Solve(SolveError::Numerical(
            "the controlled-input polytope must bound every input coordinate".into(),
        )));
    }

    struct BoxNode {
        id: u64,
        lb: f64,
        lo: Vec<f64>,
        hi: Vec<f64>,
    }
    struct HeapBox(BoxNode);
    impl PartialEq for HeapBox {
        fn eq(&self, other: &Self) -> bool {
            self.0.lb == other.0.lb && self.0.id == other.0.id
        }
    }
    impl Eq for HeapBox {}
    impl PartialOrd for HeapBox {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for HeapBox {
        fn cmp(&self, other: &Self) -> Ordering {
            other.0.lb.total_cmp(&self.0.lb).then_with(|| other.0.id.cmp(&self.0.id))
        }
    }

    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut install = |cand: Vec<f64>,
                       incumbent: &mut Option<(Vec<f64>, f64)>,
                       params: &SolverParams| {
        if separates_all(pairs, &cand, epsilon, params) {
            let polished = sparsify_polish(
                pairs,
                encoding,
                scale_polish(pairs, &cand, epsilon, params),
                epsilon,
                params,
            );
            let value = encoding.evaluate(&polished);
            if incumbent.as_ref().map_or(true, |(_, b)| value < *b) {
                *incumbent = Some((polished, value));
            }
        }
    };
    if let Some(seed_u) = seed {
        install(seed_u.to_vec(), &mut incumbent, params);
    }

    let gap_abs =
        |inc: f64| -> f64 { params.rel_gap * inc.abs().max(1.0) };

    let mut heap = BinaryHeap::new();
    heap.push(HeapBox(BoxNode { id: 0, lb: f64::NEG_INFINITY, lo: root_lo, hi: root_hi }));
    let mut next_id = 1u64;
    let mut boxes = 0u64;
    let mut limit: Option<MilpStatus> = None;

    while let Some(HeapBox(node)) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.lb >= inc - gap_abs(*inc) {
                // Best-first: every remaining box is at least as costly.
                heap.push(HeapBox(node));
                break;
            }
        }
        if boxes >= params.node_limit {
            heap.push(HeapBox(node));
            limit = Some(MilpStatus::NodeLimit);
            break;
        }
        if start.elapsed().as_secs_f64() > params.time_limit_seconds {
            heap.push(HeapBox(node));
            limit = Some(MilpStatus::TimeLimit);
            break;
        }
        boxes += 1;
        if boxes % 10_000 == 0 && std::env::var_os("SEPDESIGN_DEBUG").is_some() {
            eprintln!(
                "[bilevel] boxes={} open={} lb={:.6} inc={:?} widths=({:.2e})",
                boxes,
                heap.len(),
                node.lb,
                incumbent.as_ref().map(|(_, v)| *v),
                node.hi.iter().zip(&node.lo).map(|(h, l)| h - l).fold(0.0f64, f64::max),
            );
        }

        // Trim the box to the region that could still beat the incumbent:
        // any point with cost below the incumbent level has every
        // coordinate inside the cap, so dropping the rest is a bound
        // argument, and certificates then cover the remaining sliver.
        let mut node = node;
        if let Some((_, inc)) = &incumbent {
            let cap = encoding.coordinate_cap(inc - gap_abs(*inc));
            if cap.is_finite() {
                let mut empty = false;
                for j in 0..nu {
                    node.lo[j] = node.lo[j].max(-cap);
                    node.hi[j] = node.hi[j].min(cap);
                    if node.lo[j] > node.hi[j] {
                        empty = true;
                        break;
                    }
                }
                if empty {
                    continue;
                }
            }
        }

        // Box cost bound and minimizer.
        let mut lp = template.clone();
        for j in 0..nu {
            lp.vars[j].lb = node.lo[j];
            lp.vars[j].ub = node.hi[j];
        }
        let sol = solve_lp(&lp, params)?;
        if sol.status != LpStatus::Optimal {
            continue; // box misses the admissible input polytope
        }
        let lb = sol.objective.max(node.lb);
        if let Some((_, inc)) = &incumbent {
            if lb >= inc - gap_abs(*inc) {
                continue;
            }
        }
        let u_c: Vec<f64> = sol.primal[0..nu].to_vec();

        // Probe the minimizer; a feasible minimizer settles the whole box.
        let uv = DVector::from_column_slice(&u_c);
        let mut violated: Vec<(f64, usize)> = Vec::new();
        let tol = 1e-9 * epsilon.max(1.0);
        for (idx, pair) in pairs.iter().enumerate() {
            let inner = solve_inner(pair, &uv, params)?;
            if inner.delta_star < epsilon - tol {
                violated.push((epsilon - inner.delta_star, idx));
            }
        }
        if violated.is_empty() {
            install(u_c, &mut incumbent, params);
            continue;
        }

        // Certificates, strongest violation first.
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut certified = false;
        for (_, idx) in &violated {
            if box_certificate(&pairs[*idx], &node.lo, &node.hi, epsilon, params)? {
                certified = true;
                break;
            }
        }
        if certified {
            continue;
        }

        // Split on the relatively widest coordinate through the minimizer.
        let mut split_j = 0usize;
        let mut best_rel = -1.0f64;
        for j in 0..nu {
            let rel = (node.hi[j] - node.lo[j]) / root_width[j];
            if rel > best_rel {
                best_rel = rel;
                split_j = j;
            }
        }
        let w = node.hi[split_j] - node.lo[split_j];
        if w <= 1e-11 {
            // Degenerate box that resists certification; abandon splitting
            // and keep it as bound information.
            heap.push(HeapBox(BoxNode { id: node.id, lb, lo: node.lo, hi: node.hi }));
            limit = Some(MilpStatus::GapLimit);
            break;
        }
        let split =
            u_c[split_j].clamp(node.lo[split_j] + 0.3 * w, node.hi[split_j] - 0.3 * w);
        let mut low = BoxNode { id: next_id, lb, lo: node.lo.clone(), hi: node.hi.clone() };
        low.hi[split_j] = split;
        next_id += 1;
        let mut high = BoxNode { id: next_id, lb, lo: node.lo, hi: node.hi };
        high.lo[split_j] = split;
        next_id += 1;
        heap.push(HeapBox(low));
        heap.push(HeapBox(high));
    }

    let open_bound = heap.iter().map(|hb| hb.0.lb).fold(f64::INFINITY, f64::min);
    let wall = start.elapsed().as_secs_f64();
    let outcome = match (&incumbent, limit) {
        (Some((_, inc)), None) => BilevelOutcome {
            status: MilpStatus::Optimal,
            best_bound: open_bound.min(*inc),
            incumbent,
            boxes,
            wall,
        },
        (Some((_, inc)), Some(status)) => BilevelOutcome {
            status,
            best_bound: open_bound.min(*inc),
            incumbent,
            boxes,
            wall,
        },
        (None, None) => BilevelOutcome {
            status: MilpStatus::Infeasible,
            best_bound: f64::INFINITY,
            incumbent: None,
            boxes,
            wall,
        },
        (None, Some(status)) => BilevelOutcome {
            status,
            best_bound: open_bound,
            incumbent: None,
            boxes,
            wall,
        },
    };
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Polytope;
    use crate::solver::VarKind;
    use nalgebra::DMatrix;

    fn params() -> SolverParams {
        SolverParams::default()
    }

    /// Two static scalar-output models (A = 0, C = 1) with an output offset.
    fn static_pair_scenario(g_offset: f64) -> Scenario {
        let base = crate::model::AffineModel {
            a: DMatrix::zeros(1, 1),
            b: DMatrix::from_row_slice(1, 1, &[1.0]),
            bw: DMatrix::zeros(1, 0),
            c: DMatrix::identity(1, 1),
            d: DMatrix::zeros(1, 1),
            dv: DMatrix::zeros(1, 0),
            f: nalgebra::DVector::zeros(1),
            g: nalgebra::DVector::zeros(1),
            n_x: 1,
            n_y: 0,
            m_u: 1,
            m_d: 0,
            x_set: Polytope::whole_space(1),
            y_set: Polytope::whole_space(0),
            d_set: Polytope::whole_space(0),
        };
        let mut other = base.clone();
        other.g = nalgebra::DVector::from_element(1, g_offset);
        Scenario {
            models: vec![base, other],
            horizon: 1,
            epsilon: 0.01,
            objective: ObjectiveSpec::OneNorm,
            x0_set: Polytope::from_point(&[0.0]),
            u_set: Polytope::from_box(&[-1.0], &[1.0]),
            w_set: Polytope::whole_space(0),
            v_set: Polytope::whole_space(0),
        }
    }

    #[test]
    fn inner_identical_models_gives_zero() {
        let scenario = static_pair_scenario(0.0);
        let pair = stack_pair(&scenario, 0, 1);
        for u in [0.0, 0.5, -1.0] {
            let inner =
                solve_inner(&pair, &DVector::from_element(1, u), &params()).unwrap();
            assert!(inner.delta_star.abs() < 1e-9, "delta = {}", inner.delta_star);
        }
    }

    #[test]
    fn inner_static_offset_forces_gap_and_r_shift() {
        let scenario = static_pair_scenario(0.5);
        let pair = stack_pair(&scenario, 0, 1);
        let inner = solve_inner(&pair, &DVector::zeros(1), &params()).unwrap();
        assert!((inner.delta_star - 0.5).abs() < 1e-9);
        // The ± difference rows of r carry the offset.
        let rho_block = pair.r_vec.rows(pair.xi, pair.rho);
        let max = rho_block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = rho_block.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((max - 0.5).abs() < 1e-12 && (min + 0.5).abs() < 1e-12);
    }

    #[test]
    fn elimination_keeps_identical_and_drops_forced_pairs() {
        // Identical models: delta* = 0 everywhere -> retained.
        let same = static_pair_scenario(0.0);
        let pairs = vec![stack_pair(&same, 0, 1)];
        let result = pair_elimination(&same, &pairs, &params()).unwrap();
        assert_eq!(result.retained.len(), 1);
        // Offset 0.5 >> epsilon with no uncertainty: separated for every
        // input -> eliminated.
        let forced = static_pair_scenario(0.5);
        let pairs = vec![stack_pair(&forced, 0, 1)];
        let result = pair_elimination(&forced, &pairs, &params()).unwrap();
        assert_eq!(result.eliminated.len(), 1);
    }

    fn encoded_value(spec: ObjectiveSpec, u: &[f64]) -> f64 {
        use crate::solver::{solve_lp, RowSense, VarSpec};
        let mut p = MilpProblem::new("obj");
        let u_vars = p.add_vars(u.len(), VarSpec::free());
        for (k, &val) in u.iter().enumerate() {
            p.add_row(RowSense::Eq, val, vec![(u_vars.start + k, 1.0)]);
        }
        let enc = encode_objective(spec, &mut p, &u_vars, u.len(), 1);
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, crate::solver::LpStatus::Optimal);
        assert!((enc.evaluate(u) - sol.objective).abs() < 1e-9);
        sol.objective
    }

    #[test]
    fn objective_epigraphs_match_direct_norms() {
        let u = [-1.0, 2.0];
        assert!((encoded_value(ObjectiveSpec::OneNorm, &u) - 3.0).abs() < 1e-9);
        assert!((encoded_value(ObjectiveSpec::InfNorm, &u) - 2.0).abs() < 1e-9);
        let w = ObjectiveSpec::WeightedSum { one_norm_weight: 1.0, inf_norm_weight: 2.0 };
        assert!((encoded_value(w, &u) - 7.0).abs() < 1e-9);
        let d = ObjectiveSpec::DeltaInfNorm { one_norm_weight: 1.0, delta_inf_weight: 1.0 };
        // |u|_1 = 3, |Δu|_inf = |2 - (-1)| = 3.
        assert!((encoded_value(d, &u) - 6.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_objective_tags_problem_for_backends() {
        let mut scenario = static_pair_scenario(0.0);
        scenario.objective = ObjectiveSpec::ExternalQuadratic;
        let pairs = vec![stack_pair(&scenario, 0, 1)];
        let (problem, _) = build_exact(&scenario, &pairs);
        assert!(problem.is_quadratic());
        match crate::solver::solve_milp(&problem, &params()) {
            Err(SolveError::UnsupportedObjective) => {}
            other => panic!("expected unsupported objective, got {other:?}"),
        }
        let err = design_exact(&scenario, &params(), &ExactOptions::default(), None);
        assert!(matches!(err, Err(FormulationError::Solve(SolveError::UnsupportedObjective))));
    }

    #[test]
    fn complexity_counts_numerical_example() {
        let scenario = crate::scenarios::build_numerical_example();
        let report = complexity_report(&scenario).unwrap();
        // Conservative: 2 * I * (T+1) * p = 2 * 10 * 3 * 2 = 120.
        assert_eq!(report.conservative_closed_form.sos1, 120);
        assert_eq!(report.conservative_closed_form.binaries, 120);
        assert_eq!(report.conservative_measured.sos1, 120);
        assert_eq!(report.conservative_measured.binaries, 120);
        // Exact carries no binaries, closed form or measured.
        assert_eq!(report.exact_closed_form.binaries, 0);
        assert_eq!(report.exact_measured.binaries, 0);
        // Closed forms per the complexity table.
        let (c0, cd, cw, cv) = (4, 2, 2, 2);
        let t = 2;
        let c2 = c0 + t * (cd + cw + cv);
        let c3 = c2; // no running state constraints
        let c1 = 2 + t * (1 + 1 + 1);
        assert_eq!(report.exact_closed_form.sos1, 20 * (c3 + 3 * 2));
        assert_eq!(
            report.exact_closed_form.continuous,
            20 * (c3 + 3 * 2) + 2 + 20 * c1 + 10
        );
    }

    #[test]
    fn exact_assembly_variable_tally_matches_layout() {
        let scenario = crate::scenarios::build_numerical_example();
        let pairs: Vec<StackedPair> =
            scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
        let (problem, assembly) = build_exact(&scenario, &pairs);
        let mut expected = assembly.u_vars.len();
        for (pair, layout) in pairs.iter().zip(&assembly.pairs) {
            expected += 1 + pair.eta + 2 * (pair.kappa + pair.xi + pair.rho);
            assert_eq!(layout.mu1.len(), pair.kappa);
            assert_eq!(layout.s3.len(), pair.rho);
        }
        // Plus objective epigraph variables.
        let epigraph = problem
            .vars
            .iter()
            .enumerate()
            .filter(|(j, v)| *j >= expected && v.kind == VarKind::Continuous)
            .count();
        assert_eq!(problem.num_vars(), expected + epigraph);
        assert!(problem.sos1_groups.len() == 2 * 0 + pairs.iter().map(|p| p.kappa + p.xi + p.rho).sum::<usize>());
    }

    #[test]
    fn verify_design_flags_non_separating_input() {
        let scenario = crate::scenarios::build_numerical_example();
        let pairs: Vec<StackedPair> =
            scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
        // u = 0 must fail on at least one retained pair, otherwise the
        // designed cost would be zero.
        let report =
            verify_design(&scenario, &pairs, &DVector::zeros(2), &params()).unwrap();
        assert!(!report.pass);
        // Eliminated pairs pass at any admissible input.
        let elim = pair_elimination(&scenario, &pairs, &params()).unwrap();
        for sep in &report.separations {
            if elim.eliminated.contains(&sep.pair) {
                assert!(sep.pass, "eliminated pair {:?} must pass at u = 0", sep.pair);
            }
        }
    }
}
