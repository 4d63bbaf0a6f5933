//! Affine models, polytopic constraint sets and scenario assembly.
//!
//! A scenario bundles N candidate models of one physical system. Each model
//! is a discrete-time affine system
//!
//! ```text
//! x(k+1) = A x(k) + B [u(k); d(k)] + Bw w(k) + f
//! z(k)   = C x(k) + D [u(k); d(k)] + Dv v(k) + g
//! ```
//!
//! whose state splits into a head partition of `n_x` entries that the shared
//! controlled input `u` is responsible for keeping inside `x_set`, and a
//! tail partition of `n_y` entries that the model-specific uncontrolled
//! input `d` must keep inside `y_set`. Initial conditions, inputs and noise
//! live in polytopes; everything downstream (stacking, the designs, model
//! invalidation) consumes these types unchanged.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::solver::SolveError;

/// Half-space set `{ x : H x <= h }`. Zero rows means the whole space.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    pub h_mat: DMatrix<f64>,
    pub h_vec: DVector<f64>,
}

impl Polytope {
    /// Panics if the row counts disagree; use [`Polytope::try_new`] for
    /// fallible construction.
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Polytope {
        assert_eq!(h_mat.nrows(), h_vec.len(), "polytope rows vs rhs length");
        Polytope { h_mat, h_vec }
    }

    pub fn try_new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Polytope, String> {
        if h_mat.nrows() != h_vec.len() {
            return Err(format!("H has {} rows but h has {} entries", h_mat.nrows(), h_vec.len()));
        }
        Ok(Polytope { h_mat, h_vec })
    }

    /// `{ x in R^dim }` with no constraints.
    pub fn whole_space(dim: usize) -> Polytope {
        Polytope { h_mat: DMatrix::zeros(0, dim), h_vec: DVector::zeros(0) }
    }

    /// Axis-aligned box; infinite entries drop the corresponding row.
    pub fn from_box(lower: &[f64], upper: &[f64]) -> Polytope {
        assert_eq!(lower.len(), upper.len());
        let dim = lower.len();
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for j in 0..dim {
            if upper[j].is_finite() {
                rows.push((j, 1.0, upper[j]));
            }
            if lower[j].is_finite() {
                rows.push((j, -1.0, -lower[j]));
            }
        }
        let mut h_mat = DMatrix::zeros(rows.len(), dim);
        let mut h_vec = DVector::zeros(rows.len());
        for (r, (j, sign, rhs)) in rows.into_iter().enumerate() {
            h_mat[(r, j)] = sign;
            h_vec[r] = rhs;
        }
        Polytope { h_mat, h_vec }
    }

    /// Box pinning every coordinate to a point.
    pub fn from_point(point: &[f64]) -> Polytope {
        Polytope::from_box(point, point)
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        if self.num_rows() == 0 {
            return true;
        }
        let resid = &self.h_mat * x - &self.h_vec;
        resid.iter().all(|&r| r <= tol)
    }

    /// Worst constraint violation at `x` (negative inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        if self.num_rows() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.h_mat * x - &self.h_vec).max()
    }
}

/// One mode hypothesis: system matrices plus partition dimensions and the
/// per-model responsibility/disturbance sets.
#[derive(Clone, Debug)]
pub struct AffineModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub n_x: usize,
    pub n_y: usize,
    pub m_u: usize,
    pub m_d: usize,
    /// Responsibility polytope of the controlled input, over the first
    /// `n_x` states, enforced at k = 1..T.
    pub x_set: Polytope,
    /// Responsibility polytope of the uncontrolled input, over the last
    /// `n_y` states, enforced at k = 1..T.
    pub y_set: Polytope,
    /// Uncontrolled-input polytope, per step.
    pub d_set: Polytope,
}

impl AffineModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn m_w(&self) -> usize {
        self.bw.ncols()
    }
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
    pub fn m_v(&self) -> usize {
        self.dv.ncols()
    }

    /// Columns of B acting on the controlled input.
    pub fn b_u(&self) -> DMatrix<f64> {
        self.b.columns(0, self.m_u).into_owned()
    }
    /// Columns of B acting on the uncontrolled input.
    pub fn b_d(&self) -> DMatrix<f64> {
        self.b.columns(self.m_u, self.m_d).into_owned()
    }
    pub fn d_u(&self) -> DMatrix<f64> {
        self.d.columns(0, self.m_u).into_owned()
    }
    pub fn d_d(&self) -> DMatrix<f64> {
        self.d.columns(self.m_u, self.m_d).into_owned()
    }
    /// Rows of A feeding the controlled-responsibility partition.
    pub fn a_x(&self) -> DMatrix<f64> {
        self.a.rows(0, self.n_x).into_owned()
    }
    /// Rows of A feeding the uncontrolled-responsibility partition.
    pub fn a_y(&self) -> DMatrix<f64> {
        self.a.rows(self.n_x, self.n_y).into_owned()
    }

    fn check_shapes(&self, index: usize, report: &mut ValidationReport) {
        let path = |field: &str| format!("models[{index}].{field}");
        let n = self.n();
        let m = self.m();
        let p = self.p();
        if self.n_x + self.n_y != n {
            report.push(path("n_x"), format!("n_x + n_y = {} but n = {n}", self.n_x + self.n_y));
        }
        if self.m_u + self.m_d != m {
            report.push(path("m_u"), format!("m_u + m_d = {} but m = {m}", self.m_u + self.m_d));
        }
        if self.a.ncols() != n {
            report.push(path("a"), format!("expected {n}x{n}, found {}x{}", self.a.nrows(), self.a.ncols()));
        }
        if self.b.nrows() != n {
            report.push(path("b"), format!("expected {n}x{m}, found {}x{}", self.b.nrows(), self.b.ncols()));
        }
        if self.bw.nrows() != n {
            report.push(path("bw"), format!("expected {n} rows, found {}", self.bw.nrows()));
        }
        if self.c.ncols() != n {
            report.push(path("c"), format!("expected {p}x{n}, found {}x{}", self.c.nrows(), self.c.ncols()));
        }
        if self.d.nrows() != p || self.d.ncols() != m {
            report.push(path("d"), format!("expected {p}x{m}, found {}x{}", self.d.nrows(), self.d.ncols()));
        }
        if self.dv.nrows() != p {
            report.push(path("dv"), format!("expected {p} rows, found {}", self.dv.nrows()));
        }
        if self.f.len() != n {
            report.push(path("f"), format!("expected length {n}, found {}", self.f.len()));
        }
        if self.g.len() != p {
            report.push(path("g"), format!("expected length {p}, found {}", self.g.len()));
        }
        if self.x_set.dim() != self.n_x {
            report.push(path("x_set"), format!("dimension {} but n_x = {}", self.x_set.dim(), self.n_x));
        }
        if self.y_set.dim() != self.n_y {
            report.push(path("y_set"), format!("dimension {} but n_y = {}", self.y_set.dim(), self.n_y));
        }
        if self.d_set.dim() != self.m_d {
            report.push(path("d_set"), format!("dimension {} but m_d = {}", self.d_set.dim(), self.m_d));
        }
    }
}

/// Input-cost choice for the designs. Weights must be nonnegative and at
/// least one positive for the weighted kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    /// `||u||_1`: sparse inputs.
    OneNorm,
    /// `||u||_inf`: small peak amplitude.
    InfNorm,
    /// `a ||u||_1 + b ||u||_inf`.
    WeightedSum { one_norm_weight: f64, inf_norm_weight: f64 },
    /// `a ||u||_1 + b ||(Δu)||_inf` where `Δu(k) = u(k) - u(k-1)`.
    DeltaInfNorm { one_norm_weight: f64, delta_inf_weight: f64 },
    /// `||u||_2`-style quadratic cost, solvable only through an external
    /// quadratic-capable backend.
    ExternalQuadratic,
}

impl ObjectiveSpec {
    pub fn weights_ok(&self) -> bool {
        match *self {
            ObjectiveSpec::OneNorm | ObjectiveSpec::InfNorm | ObjectiveSpec::ExternalQuadratic => true,
            ObjectiveSpec::WeightedSum { one_norm_weight: a, inf_norm_weight: b }
            | ObjectiveSpec::DeltaInfNorm { one_norm_weight: a, delta_inf_weight: b } => {
                a >= 0.0 && b >= 0.0 && (a > 0.0 || b > 0.0)
            }
        }
    }
}

/// A full discrimination problem instance: the candidate models, the shared
/// constraint sets, the horizon and the separability index.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub models: Vec<AffineModel>,
    /// Horizon length T (steps); inputs exist for k = 0..T-1, outputs are
    /// compared for k = 0..T.
    pub horizon: usize,
    /// Separability index: guaranteed worst-case gap between some output
    /// coordinate of any two models at some time.
    pub epsilon: f64,
    pub objective: ObjectiveSpec,
    /// Initial-state polytope, shared by all models.
    pub x0_set: Polytope,
    /// Controlled-input polytope, per step.
    pub u_set: Polytope,
    /// Process-noise polytope, per step.
    pub w_set: Polytope,
    /// Measurement-noise polytope, per step.
    pub v_set: Polytope,
}

impl Scenario {
    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    /// Number of unordered model pairs I = N(N-1)/2.
    pub fn pair_count(&self) -> usize {
        let n = self.models.len();
        n * (n - 1) / 2
    }

    /// Unordered pairs (i, j), i < j, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.models.len();
        let mut out = Vec::with_capacity(self.pair_count());
        for i in 0..n {
            for j in (i + 1)..n {
                out.push((i, j));
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.models[0].n()
    }
    pub fn n_x(&self) -> usize {
        self.models[0].n_x
    }
    pub fn n_y(&self) -> usize {
        self.models[0].n_y
    }
    pub fn m_u(&self) -> usize {
        self.models[0].m_u
    }
    pub fn m_w(&self) -> usize {
        self.models[0].m_w()
    }
    pub fn m_v(&self) -> usize {
        self.models[0].m_v()
    }
    pub fn p(&self) -> usize {
        self.models[0].p()
    }
}

/// One named defect found by [`validate_scenario`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

/// Diagnostics, not exceptions: an empty report means the scenario is
/// usable by every downstream module.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation { path: path.into(), message: message.into() });
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every shape, dimension and invariant; returns all findings rather
/// than stopping at the first.
pub fn validate_scenario(scenario: &Scenario) -> ValidationReport {
    let mut report = ValidationReport::default();
    if scenario.models.len() < 2 {
        report.push("models", format!("need at least 2 models, found {}", scenario.models.len()));
    }
    if scenario.horizon == 0 {
        report.push("horizon", "horizon must be at least 1");
    }
    if !(scenario.epsilon > 0.0) {
        report.push("epsilon", "epsilon must be positive");
    }
    if !scenario.objective.weights_ok() {
        report.push("objective", "weights must be nonnegative with at least one positive");
    }
    if scenario.models.is_empty() {
        return report;
    }
    let first = &scenario.models[0];
    let (n, n_x, n_y, m_u, m_w, m_v, p) =
        (first.n(), first.n_x, first.n_y, first.m_u, first.m_w(), first.m_v(), first.p());
    for (i, model) in scenario.models.iter().enumerate() {
        model.check_shapes(i, &mut report);
        let shared: [(&str, usize, usize); 7] = [
            ("n", model.n(), n),
            ("n_x", model.n_x, n_x),
            ("n_y", model.n_y, n_y),
            ("m_u", model.m_u, m_u),
            ("m_w", model.m_w(), m_w),
            ("m_v", model.m_v(), m_v),
            ("p", model.p(), p),
        ];
        for (name, got, want) in shared {
            if got != want {
                report.push(
                    format!("models[{i}].{name}"),
                    format!("{name} = {got} differs from models[0].{name} = {want}"),
                );
            }
        }
    }
    let shared_sets: [(&str, &Polytope, usize); 4] = [
        ("shared_sets.x0", &scenario.x0_set, n),
        ("shared_sets.u", &scenario.u_set, m_u),
        ("shared_sets.w", &scenario.w_set, m_w),
        ("shared_sets.v", &scenario.v_set, m_v),
    ];
    for (name, set, dim) in shared_sets {
        if set.dim() != dim {
            report.push(name, format!("dimension {} but expected {dim}", set.dim()));
        }
    }
    report
}

// --------------------------------------------------------------------- //
// Polytope sampling utilities
// --------------------------------------------------------------------- //

/// Per-coordinate bounding box of a polytope via 2·dim LPs. Unbounded
/// directions come back infinite.
pub fn polytope_bounding_box(poly: &Polytope) -> Result<(Vec<f64>, Vec<f64>), SolveError> {
    use crate::solver::{solve_lp, LpStatus, MilpProblem, RowSense, SolverParams, VarSpec};
    let dim = poly.dim();
    let mut lo = vec![f64::NEG_INFINITY; dim];
    let mut hi = vec![f64::INFINITY; dim];
    if dim == 0 {
        return Ok((lo, hi));
    }
    let mut base = MilpProblem::new("bounding-box");
    base.add_vars(dim, VarSpec::free());
    for r in 0..poly.num_rows() {
        let coeffs: Vec<(usize, f64)> =
            (0..dim).filter(|&j| poly.h_mat[(r, j)] != 0.0).map(|j| (j, poly.h_mat[(r, j)])).collect();
        base.add_row(RowSense::Le, poly.h_vec[r], coeffs);
    }
    let params = SolverParams::default();
    for j in 0..dim {
        for maximize in [false, true] {
            let mut p = base.clone();
            p.objective = vec![(j, if maximize { -1.0 } else { 1.0 })];
            let sol = solve_lp(&p, &params)?;
            match sol.status {
                LpStatus::Optimal => {
                    if maximize {
                        hi[j] = sol.primal[j];
                    } else {
                        lo[j] = sol.primal[j];
                    }
                }
                LpStatus::Unbounded => {}
                LpStatus::Infeasible => {
                    return Err(SolveError::Numerical("polytope is empty".into()));
                }
            }
        }
    }
    Ok((lo, hi))
}

/// Uniform rejection sampling from a polytope using its bounding box
/// (unbounded directions truncated at ±1e3). Returns `None` when the
/// rejection budget runs out.
pub fn sample_polytope(
    poly: &Polytope,
    lo: &[f64],
    hi: &[f64],
    rng: &mut ChaCha8Rng,
    max_tries: usize,
) -> Option<DVector<f64>> {
    let dim = poly.dim();
    if dim == 0 {
        return Some(DVector::zeros(0));
    }
    const TRUNC: f64 = 1e3;
    let lo: Vec<f64> = lo.iter().map(|&v| if v.is_finite() { v } else { -TRUNC }).collect();
    let hi: Vec<f64> = hi.iter().map(|&v| if v.is_finite() { v } else { TRUNC }).collect();
    for _ in 0..max_tries {
        let x = DVector::from_iterator(
            dim,
            (0..dim).map(|j| if lo[j] < hi[j] { rng.gen_range(lo[j]..=hi[j]) } else { lo[j] }),
        );
        if poly.contains(&x, 1e-12) {
            return Some(x);
        }
    }
    None
}

// --------------------------------------------------------------------- //
// Sampled well-posedness check
// --------------------------------------------------------------------- //

/// Witness of a failed responsibility-feasibility sample: the sampled data
/// plus the first horizon prefix whose feasibility LP is infeasible. The
/// witness replays by rebuilding the same LP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosednessWitness {
    pub sample_index: usize,
    pub x0: Vec<f64>,
    /// The given counterpart signal: the stacked u-sequence for the d-side
    /// check, the stacked d-sequence for the u-side check.
    pub given: Vec<f64>,
    pub w: Vec<f64>,
    pub first_infeasible_step: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PosednessVerdict {
    Pass,
    Fail(PosednessWitness),
}

impl PosednessVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, PosednessVerdict::Pass)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelPosedness {
    pub model: usize,
    /// Existence of an admissible d keeping the y-partition inside its
    /// responsibility set for sampled (x0, u, w).
    pub d_side: PosednessVerdict,
    /// Existence of an admissible u keeping the x-partition inside its
    /// responsibility set for sampled (x0, d, w).
    pub u_side: PosednessVerdict,
}

/// Outcome of the sampled well-posedness heuristic. This is a necessary
/// test only: the underlying condition quantifies over all admissible
/// counterpart signals, which sampling cannot certify.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WellPosednessReport {
    pub sample_count: usize,
    pub seed: u64,
    pub per_model: Vec<ModelPosedness>,
}

impl WellPosednessReport {
    pub fn all_passed(&self) -> bool {
        self.per_model.iter().all(|m| m.d_side.passed() && m.u_side.passed())
    }
}

/// Draw `sample_count` admissible (x0, u, w) tuples per model and solve the
/// LP "does some admissible d keep y(k) inside its responsibility set for
/// k = 1..T"; symmetrically for u with sampled (x0, d, w). Initial states
/// are rejected into `y(0)` membership of the model's responsibility set.
pub fn check_well_posedness(
    scenario: &Scenario,
    sample_count: usize,
    seed: u64,
) -> Result<WellPosednessReport, SolveError> {
    use rand::SeedableRng;

    let t = scenario.horizon;
    let (x0_lo, x0_hi) = polytope_bounding_box(&scenario.x0_set)?;
    let (u_lo, u_hi) = polytope_bounding_box(&scenario.u_set)?;
    let (w_lo, w_hi) = polytope_bounding_box(&scenario.w_set)?;

    let mut per_model = Vec::with_capacity(scenario.models.len());
    for (mi, model) in scenario.models.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (mi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let stacked = crate::stack::stack_single(model, t);
        let (d_lo, d_hi) = polytope_bounding_box(&model.d_set)?;
        let mut d_side = PosednessVerdict::Pass;
        let mut u_side = PosednessVerdict::Pass;

        for sample in 0..sample_count {
            let x0 = loop {
                let cand = sample_polytope(&scenario.x0_set, &x0_lo, &x0_hi, &mut rng, 5000)
                    .ok_or_else(|| SolveError::Numerical("rejection sampling from X0 failed".into()))?;
                let y0 = cand.rows(model.n_x, model.n_y).into_owned();
                if model.y_set.contains(&y0, 1e-9) {
                    break cand;
                }
            };
            let mut u_seq = Vec::with_capacity(t * model.m_u);
            let mut w_seq = Vec::with_capacity(t * model.m_w());
            let mut d_seq = Vec::with_capacity(t * model.m_d);
            for _ in 0..t {
                let u = sample_polytope(&scenario.u_set, &u_lo, &u_hi, &mut rng, 5000)
                    .ok_or_else(|| SolveError::Numerical("rejection sampling from U failed".into()))?;
                u_seq.extend(u.iter().copied());
                let w = sample_polytope(&scenario.w_set, &w_lo, &w_hi, &mut rng, 5000)
                    .ok_or_else(|| SolveError::Numerical("rejection sampling from W failed".into()))?;
                w_seq.extend(w.iter().copied());
                let d = sample_polytope(&model.d_set, &d_lo, &d_hi, &mut rng, 5000)
                    .ok_or_else(|| SolveError::Numerical("rejection sampling from D failed".into()))?;
                d_seq.extend(d.iter().copied());
            }

            if d_side.passed() {
                if let Some(witness) = responsibility_witness(
                    scenario, model, &stacked, Side::D, &x0, &u_seq, &w_seq, sample,
                )? {
                    d_side = PosednessVerdict::Fail(witness);
                }
            }
            if u_side.passed() {
                if let Some(witness) = responsibility_witness(
                    scenario, model, &stacked, Side::U, &x0, &d_seq, &w_seq, sample,
                )? {
                    u_side = PosednessVerdict::Fail(witness);
                }
            }
            if !d_side.passed() && !u_side.passed() {
                break;
            }
        }
        per_model.push(ModelPosedness { model: mi, d_side, u_side });
    }
    Ok(WellPosednessReport { sample_count, seed, per_model })
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    /// Solve over d, responsibility rows on the y-partition.
    D,
    /// Solve over u, responsibility rows on the x-partition.
    U,
}

/// Feasibility LP over the responsible signal for one sampled tuple; on
/// infeasibility, scans prefixes to locate the first failing step.
#[allow(clippy::too_many_arguments)]
fn responsibility_witness(
    scenario: &Scenario,
    model: &AffineModel,
    stacked: &crate::stack::StackedSingle,
    side: Side,
    x0: &DVector<f64>,
    given: &[f64],
    w: &[f64],
    sample_index: usize,
) -> Result<Option<PosednessWitness>, SolveError> {
    use crate::solver::{solve_lp, LpStatus, MilpProblem, RowSense, SolverParams, VarSpec};

    let t = scenario.horizon;
    let givenv = DVector::from_column_slice(given);
    let wv = DVector::from_column_slice(w);
    // Fixed part of the responsible partition trajectory (k = 1..T stacked).
    let (fixed, gamma, resp_set, per_step, step_set, part_dim) = match side {
        Side::D => (
            &stacked.m_y * x0 + &stacked.gamma_yu * &givenv + &stacked.gamma_yw * &wv + &stacked.f_tilde_y,
            &stacked.gamma_yd,
            &model.y_set,
            model.m_d,
            &model.d_set,
            model.n_y,
        ),
        Side::U => (
            &stacked.m_x * x0 + &stacked.gamma_xd * &givenv + &stacked.gamma_xw * &wv + &stacked.f_tilde_x,
            &stacked.gamma_xu,
            &model.x_set,
            model.m_u,
            &scenario.u_set,
            model.n_x,
        ),
    };

    let feasible_upto = |k_max: usize| -> Result<bool, SolveError> {
        let mut lp = MilpProblem::new("responsibility-feasibility");
        lp.add_vars(t * per_step, VarSpec::free());
        for k in 0..t {
            for r in 0..step_set.num_rows() {
                let coeffs: Vec<(usize, f64)> = (0..per_step)
                    .filter(|&j| step_set.h_mat[(r, j)] != 0.0)
                    .map(|j| (k * per_step + j, step_set.h_mat[(r, j)]))
                    .collect();
                lp.add_row(RowSense::Le, step_set.h_vec[r], coeffs);
            }
        }
        for k in 1..=k_max {
            let block = (k - 1) * part_dim;
            for r in 0..resp_set.num_rows() {
                let mut coeffs = Vec::new();
                let mut rhs = resp_set.h_vec[r];
                for e in 0..part_dim {
                    let pr = resp_set.h_mat[(r, e)];
                    if pr == 0.0 {
                        continue;
                    }
                    rhs -= pr * fixed[block + e];
                    for col in 0..(t * per_step) {
                        let gd = gamma[(block + e, col)];
                        if gd != 0.0 {
                            coeffs.push((col, pr * gd));
                        }
                    }
                }
                lp.add_row(RowSense::Le, rhs, coeffs);
            }
        }
        let sol = solve_lp(&lp, &SolverParams::default())?;
        Ok(sol.status == LpStatus::Optimal)
    };

    if feasible_upto(t)? {
        return Ok(None);
    }
    let mut first = t;
    for k in 1..=t {
        if !feasible_upto(k)? {
            first = k;
            break;
        }
    }
    Ok(Some(PosednessWitness {
        sample_index,
        x0: x0.as_slice().to_vec(),
        given: given.to_vec(),
        w: w.to_vec(),
        first_infeasible_step: first,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn scalar_chain_scenario() -> Scenario {
        // y(k+1) = y(k) + d, X_y = {y <= 0}, D = {d = 1}, y(0) = 0.
        let model = AffineModel {
            a: DMatrix::identity(1, 1),
            b: DMatrix::from_row_slice(1, 1, &[1.0]),
            bw: DMatrix::zeros(1, 0),
            c: DMatrix::identity(1, 1),
            d: DMatrix::zeros(1, 1),
            dv: DMatrix::zeros(1, 0),
            f: DVector::zeros(1),
            g: DVector::zeros(1),
            n_x: 0,
            n_y: 1,
            m_u: 0,
            m_d: 1,
            x_set: Polytope::whole_space(0),
            y_set: Polytope::from_box(&[f64::NEG_INFINITY], &[0.0]),
            d_set: Polytope::from_point(&[1.0]),
        };
        Scenario {
            models: vec![model.clone(), model],
            horizon: 2,
            epsilon: 0.1,
            objective: ObjectiveSpec::OneNorm,
            x0_set: Polytope::from_point(&[0.0]),
            u_set: Polytope::whole_space(0),
            w_set: Polytope::whole_space(0),
            v_set: Polytope::whole_space(0),
        }
    }

    #[test]
    fn validation_reports_shape_mismatch_with_path() {
        let mut scenario = crate::scenarios::build_numerical_example();
        // B loses a column: n x (m - 1).
        scenario.models[2].b = DMatrix::identity(2, 1);
        let report = validate_scenario(&scenario);
        assert!(!report.is_ok());
        assert!(
            report.violations.iter().any(|v| v.path.contains("models[2]")),
            "violations: {:?}",
            report.violations
        );
    }

    #[test]
    fn validation_accepts_benchmark_and_rejects_zero_epsilon() {
        let mut scenario = crate::scenarios::build_numerical_example();
        assert!(validate_scenario(&scenario).is_ok());
        scenario.epsilon = 0.0;
        let report = validate_scenario(&scenario);
        assert!(report
            .violations
            .iter()
            .any(|v| v.path == "epsilon" && v.message.contains("positive")));
    }

    #[test]
    fn validation_is_pure() {
        let scenario = crate::scenarios::build_numerical_example();
        let a = format!("{:?}", validate_scenario(&scenario).violations);
        let b = format!("{:?}", validate_scenario(&scenario).violations);
        assert_eq!(a, b);
    }

    #[test]
    fn well_posedness_vacuous_without_responsibilities() {
        let mut scenario = crate::scenarios::build_numerical_example();
        for m in &mut scenario.models {
            m.x_set = Polytope::whole_space(1);
            m.y_set = Polytope::whole_space(1);
        }
        let report = check_well_posedness(&scenario, 10, 3).unwrap();
        assert!(report.all_passed());
    }

    #[test]
    fn well_posedness_forced_violation_has_witness_at_first_step() {
        let scenario = scalar_chain_scenario();
        let report = check_well_posedness(&scenario, 5, 1).unwrap();
        assert!(!report.all_passed());
        match &report.per_model[0].d_side {
            PosednessVerdict::Fail(witness) => {
                assert_eq!(witness.first_infeasible_step, 1);
                assert_eq!(witness.x0, vec![0.0]);
            }
            PosednessVerdict::Pass => panic!("expected d-side failure"),
        }
    }

    #[test]
    fn well_posedness_witness_replays_as_infeasible_lp() {
        use crate::solver::{solve_lp, LpStatus, MilpProblem, RowSense, SolverParams, VarSpec};
        let scenario = scalar_chain_scenario();
        let report = check_well_posedness(&scenario, 3, 1).unwrap();
        let PosednessVerdict::Fail(witness) = &report.per_model[0].d_side else {
            panic!("expected failure");
        };
        // Replay: d in {1} with y(k) <= 0 for k = 1..first_infeasible_step.
        let model = &scenario.models[0];
        let t = scenario.horizon;
        let stacked = crate::stack::stack_single(model, t);
        let x0 = DVector::from_column_slice(&witness.x0);
        let fixed = &stacked.m_y * &x0 + &stacked.f_tilde_y;
        let mut lp = MilpProblem::new("replay");
        lp.add_vars(t, VarSpec::continuous(1.0, 1.0));
        for k in 1..=witness.first_infeasible_step {
            let row = k - 1;
            let coeffs: Vec<(usize, f64)> =
                (0..t).filter(|&c| stacked.gamma_yd[(row, c)] != 0.0)
                    .map(|c| (c, stacked.gamma_yd[(row, c)]))
                    .collect();
            lp.add_row(RowSense::Le, -fixed[row], coeffs);
        }
        let sol = solve_lp(&lp, &SolverParams::default()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn bounding_box_and_sampling() {
        use rand::SeedableRng;
        // Simplex-ish polytope: x + y <= 1, x, y >= 0.
        let poly = Polytope::new(
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            DVector::from_column_slice(&[1.0, 0.0, 0.0]),
        );
        let (lo, hi) = polytope_bounding_box(&poly).unwrap();
        assert!((lo[0] - 0.0).abs() < 1e-9 && (hi[0] - 1.0).abs() < 1e-9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x = sample_polytope(&poly, &lo, &hi, &mut rng, 1000).unwrap();
            assert!(poly.contains(&x, 1e-12));
        }
    }
}
