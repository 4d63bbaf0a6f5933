//! Time-concatenated system matrices and the step-by-step simulation
//! oracle.
//!
//! For a horizon T the state recursion is condensed into block matrices so
//! that the stacked state (k = 1..T), the responsibility partitions and the
//! stacked output (k = 0..T) become affine functions of the initial state,
//! the input sequences and the noise sequences. Outputs are compared at
//! T + 1 time points while inputs exist only for k = 0..T-1, so the output
//! feedthrough blocks for the nonexistent u(T), d(T) are zero; measurement
//! noise enters at every output instant, v carrying T + 1 blocks.
//!
//! Pair and global stacks assemble the separation geometry: `lambda` maps
//! the concatenated uncertainty `x̄ = [x0; d; w; v]` (per pair or across all
//! models) to the ± output-difference rows, `r_mat`/`r_vec`/`s_mat` bundle
//! every inequality of a pair's inner problem, and `h_xbar` is the
//! uncertainty-domain polytope.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{AffineModel, Polytope, Scenario};

// --------------------------------------------------------------------- //
// Block helpers
// --------------------------------------------------------------------- //

fn vstack(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = mats.first().map_or(0, |m| m.ncols());
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in mats {
        out.view_mut((at, 0), (m.nrows(), m.ncols())).copy_from(m);
        at += m.nrows();
    }
    out
}

fn vcat(vecs: &[DVector<f64>]) -> DVector<f64> {
    let len: usize = vecs.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(len);
    let mut at = 0;
    for v in vecs {
        out.rows_mut(at, v.len()).copy_from(v);
        at += v.len();
    }
    out
}

fn block_diag(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = mats.iter().map(|m| m.nrows()).sum();
    let cols: usize = mats.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for m in mats {
        out.view_mut((r, c), (m.nrows(), m.ncols())).copy_from(m);
        r += m.nrows();
        c += m.ncols();
    }
    out
}

fn hstack(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = mats.first().map_or(0, |m| m.nrows());
    let cols: usize = mats.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in mats {
        out.view_mut((0, at), (m.nrows(), m.ncols())).copy_from(m);
        at += m.ncols();
    }
    out
}

/// `diag_T { m }`: T copies of `m` on the block diagonal.
fn diag_t(m: &DMatrix<f64>, t: usize) -> DMatrix<f64> {
    block_diag(&vec![m.clone(); t])
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    let rows: Vec<Value> = (0..m.nrows())
        .map(|r| Value::Array((0..m.ncols()).map(|c| json!(m[(r, c)])).collect()))
        .collect();
    Value::Array(rows)
}

fn vector_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

// --------------------------------------------------------------------- //
// Per-model stack
// --------------------------------------------------------------------- //

/// All per-model horizon-T matrices. State-side blocks stack k = 1..T;
/// output-side blocks stack k = 0..T.
#[derive(Clone, Debug)]
pub struct StackedSingle {
    pub t: usize,
    /// `[A; A^2; ...; A^T]`, (T n) x n.
    pub a_bar: DMatrix<f64>,
    /// Block lower-triangular with identity diagonal: block (k, j) = A^(k-j).
    pub theta: DMatrix<f64>,
    /// `vect_T { f }`.
    pub f_bar: DVector<f64>,
    /// `theta * f_bar`: affine drift of the stacked state.
    pub f_tilde: DVector<f64>,
    /// `vect_{T+1} { g }`: output offset for k = 0..T.
    pub g_tilde: DVector<f64>,
    /// Input-to-state maps, block (k, j) = A^(k-1-j) B_*.
    pub gamma_u: DMatrix<f64>,
    pub gamma_d: DMatrix<f64>,
    pub gamma_w: DMatrix<f64>,
    /// Output map `diag_{T+1} { C }`, ((T+1) p) x ((T+1) n).
    pub e: DMatrix<f64>,
    /// Output feedthrough of u: diagonal D_u blocks for k = 0..T-1, zero
    /// block row at k = T. ((T+1) p) x (T m_u).
    pub f_u: DMatrix<f64>,
    /// Same for d.
    pub f_d: DMatrix<f64>,
    /// Measurement-noise feedthrough `diag_{T+1} { D_v }`: v enters every
    /// output instant. ((T+1) p) x ((T+1) m_v).
    pub f_v: DMatrix<f64>,
    /// Controlled-responsibility partition of the stacked state:
    /// block k = [A_x] A^(k-1), (T n_x) x n.
    pub m_x: DMatrix<f64>,
    pub f_tilde_x: DVector<f64>,
    pub gamma_xu: DMatrix<f64>,
    pub gamma_xd: DMatrix<f64>,
    pub gamma_xw: DMatrix<f64>,
    /// Uncontrolled-responsibility partition.
    pub m_y: DMatrix<f64>,
    pub f_tilde_y: DVector<f64>,
    pub gamma_yu: DMatrix<f64>,
    pub gamma_yd: DMatrix<f64>,
    pub gamma_yw: DMatrix<f64>,
}

impl StackedSingle {
    /// State map including the k = 0 identity block: `[I; a_bar]`.
    pub fn a_out(&self) -> DMatrix<f64> {
        let n = self.a_bar.ncols();
        vstack(&[DMatrix::identity(n, n), self.a_bar.clone()])
    }

    /// Input maps including the k = 0 zero block: `[0; gamma_*]`.
    pub fn gamma_out(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.a_bar.ncols();
        vstack(&[DMatrix::zeros(n, gamma.ncols()), gamma.clone()])
    }

    pub fn f_out(&self) -> DVector<f64> {
        let n = self.a_bar.ncols();
        vcat(&[DVector::zeros(n), self.f_tilde.clone()])
    }

    /// Named-matrix JSON dump for cross-checking against an independent
    /// implementation.
    pub fn dump_json(&self) -> Value {
        json!({
            "t": self.t,
            "a_bar": matrix_json(&self.a_bar),
            "theta": matrix_json(&self.theta),
            "f_bar": vector_json(&self.f_bar),
            "f_tilde": vector_json(&self.f_tilde),
            "g_tilde": vector_json(&self.g_tilde),
            "gamma_u": matrix_json(&self.gamma_u),
            "gamma_d": matrix_json(&self.gamma_d),
            "gamma_w": matrix_json(&self.gamma_w),
            "e": matrix_json(&self.e),
            "f_u": matrix_json(&self.f_u),
            "f_d": matrix_json(&self.f_d),
            "f_v": matrix_json(&self.f_v),
            "m_x": matrix_json(&self.m_x),
            "f_tilde_x": vector_json(&self.f_tilde_x),
            "gamma_xu": matrix_json(&self.gamma_xu),
            "gamma_xd": matrix_json(&self.gamma_xd),
            "gamma_xw": matrix_json(&self.gamma_xw),
            "m_y": matrix_json(&self.m_y),
            "f_tilde_y": vector_json(&self.f_tilde_y),
            "gamma_yu": matrix_json(&self.gamma_yu),
            "gamma_yd": matrix_json(&self.gamma_yd),
            "gamma_yw": matrix_json(&self.gamma_yw),
        })
    }
}

/// Build every horizon-T matrix of one model by direct expansion of the
/// state recursion.
pub fn stack_single(model: &AffineModel, t: usize) -> StackedSingle {
    assert!(t >= 1, "horizon must be at least 1");
    let n = model.n();
    let p = model.p();
    let (m_u, m_d, m_w) = (model.m_u, model.m_d, model.m_w());

    // Powers of A up to T.
    let mut powers: Vec<DMatrix<f64>> = Vec::with_capacity(t + 1);
    powers.push(DMatrix::identity(n, n));
    for k in 1..=t {
        powers.push(&powers[k - 1] * &model.a);
    }

    let mut a_bar = DMatrix::zeros(t * n, n);
    for k in 1..=t {
        a_bar.view_mut(((k - 1) * n, 0), (n, n)).copy_from(&powers[k]);
    }
    let mut theta = DMatrix::zeros(t * n, t * n);
    for k in 1..=t {
        for j in 1..=k {
            theta.view_mut(((k - 1) * n, (j - 1) * n), (n, n)).copy_from(&powers[k - j]);
        }
    }
    let f_bar = vcat(&vec![model.f.clone(); t]);
    let f_tilde = &theta * &f_bar;
    let g_tilde = vcat(&vec![model.g.clone(); t + 1]);

    let gamma_of = |bmat: &DMatrix<f64>, cols_per: usize| -> DMatrix<f64> {
        let mut gamma = DMatrix::zeros(t * n, t * cols_per);
        for k in 1..=t {
            for j in 0..k {
                let block = &powers[k - 1 - j] * bmat;
                gamma.view_mut(((k - 1) * n, j * cols_per), (n, cols_per)).copy_from(&block);
            }
        }
        gamma
    };
    let b_u = model.b_u();
    let b_d = model.b_d();
    let gamma_u = gamma_of(&b_u, m_u);
    let gamma_d = gamma_of(&b_d, m_d);
    let gamma_w = gamma_of(&model.bw, m_w);

    // Output side, k = 0..T.
    let e = diag_t(&model.c, t + 1);
    let feedthrough = |dmat: &DMatrix<f64>, cols_per: usize| -> DMatrix<f64> {
        let mut f = DMatrix::zeros((t + 1) * p, t * cols_per);
        for k in 0..t {
            f.view_mut((k * p, k * cols_per), (p, cols_per)).copy_from(dmat);
        }
        f
    };
    let f_u = feedthrough(&model.d_u(), m_u);
    let f_d = feedthrough(&model.d_d(), m_d);
    let f_v = diag_t(&model.dv, t + 1);

    // Responsibility partitions over k = 1..T.
    let partition = |rows_start: usize, dim: usize, f_part: DVector<f64>, b_row: &dyn Fn(&DMatrix<f64>) -> DMatrix<f64>| {
        let a_part = model.a.rows(rows_start, dim).into_owned();
        let mut m_mat = DMatrix::zeros(t * dim, n);
        for k in 1..=t {
            let block = &a_part * &powers[k - 1];
            m_mat.view_mut(((k - 1) * dim, 0), (dim, n)).copy_from(&block);
        }
        let gamma_part = |bmat: &DMatrix<f64>, cols_per: usize| -> DMatrix<f64> {
            let mut gamma = DMatrix::zeros(t * dim, t * cols_per);
            let b_head = b_row(bmat);
            for k in 1..=t {
                for j in 0..k {
                    if j == k - 1 {
                        gamma
                            .view_mut(((k - 1) * dim, j * cols_per), (dim, cols_per))
                            .copy_from(&b_head);
                    } else {
                        let block = &a_part * &powers[k - 2 - j] * bmat;
                        gamma
                            .view_mut(((k - 1) * dim, j * cols_per), (dim, cols_per))
                            .copy_from(&block);
                    }
                }
            }
            gamma
        };
        let mut f_tilde_part = DVector::zeros(t * dim);
        for k in 1..=t {
            // f contribution to x(k-1), then one more partitioned step.
            let mut acc = f_part.clone();
            if k >= 2 {
                let drift = f_tilde.rows((k - 2) * n, n).into_owned();
                acc += &a_part * drift;
            }
            f_tilde_part.rows_mut((k - 1) * dim, dim).copy_from(&acc);
        }
        (m_mat, f_tilde_part, gamma_part(&b_u, m_u), gamma_part(&b_d, m_d), gamma_part(&model.bw, m_w))
    };
    let take_head = |rows_start: usize, dim: usize| {
        move |bmat: &DMatrix<f64>| bmat.rows(rows_start, dim).into_owned()
    };
    let (m_x, f_tilde_x, gamma_xu, gamma_xd, gamma_xw) = partition(
        0,
        model.n_x,
        model.f.rows(0, model.n_x).into_owned(),
        &take_head(0, model.n_x),
    );
    let (m_y, f_tilde_y, gamma_yu, gamma_yd, gamma_yw) = partition(
        model.n_x,
        model.n_y,
        model.f.rows(model.n_x, model.n_y).into_owned(),
        &take_head(model.n_x, model.n_y),
    );

    StackedSingle {
        t,
        a_bar,
        theta,
        f_bar,
        f_tilde,
        g_tilde,
        gamma_u,
        gamma_d,
        gamma_w,
        e,
        f_u,
        f_d,
        f_v,
        m_x,
        f_tilde_x,
        gamma_xu,
        gamma_xd,
        gamma_xw,
        m_y,
        f_tilde_y,
        gamma_yu,
        gamma_yd,
        gamma_yw,
    }
}

// --------------------------------------------------------------------- //
// Simulation oracle
// --------------------------------------------------------------------- //

#[derive(Debug, Error, PartialEq)]
pub enum SimulateError {
    #[error("sequence {name} has {got} steps, expected {want}")]
    LengthMismatch { name: &'static str, got: usize, want: usize },
    #[error("vector {name} has {got} entries, expected {want}")]
    DimMismatch { name: &'static str, got: usize, want: usize },
}

/// Apply the state/output recursion exactly. `u`, `d`, `w` carry T steps,
/// `v` carries T + 1; trajectories come back for k = 0..T with the output
/// at k = T using zero input feedthrough.
pub fn simulate(
    model: &AffineModel,
    x0: &DVector<f64>,
    u_seq: &[DVector<f64>],
    d_seq: &[DVector<f64>],
    w_seq: &[DVector<f64>],
    v_seq: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), SimulateError> {
    let t = u_seq.len();
    if d_seq.len() != t {
        return Err(SimulateError::LengthMismatch { name: "d", got: d_seq.len(), want: t });
    }
    if w_seq.len() != t {
        return Err(SimulateError::LengthMismatch { name: "w", got: w_seq.len(), want: t });
    }
    if v_seq.len() != t + 1 {
        return Err(SimulateError::LengthMismatch { name: "v", got: v_seq.len(), want: t + 1 });
    }
    if x0.len() != model.n() {
        return Err(SimulateError::DimMismatch { name: "x0", got: x0.len(), want: model.n() });
    }
    let check = |name: &'static str, seq: &[DVector<f64>], want: usize| -> Result<(), SimulateError> {
        for v in seq {
            if v.len() != want {
                return Err(SimulateError::DimMismatch { name, got: v.len(), want });
            }
        }
        Ok(())
    };
    check("u", u_seq, model.m_u)?;
    check("d", d_seq, model.m_d)?;
    check("w", w_seq, model.m_w())?;
    check("v", v_seq, model.m_v())?;

    let b_u = model.b_u();
    let b_d = model.b_d();
    let d_u = model.d_u();
    let d_d = model.d_d();
    let mut states = Vec::with_capacity(t + 1);
    let mut outputs = Vec::with_capacity(t + 1);
    states.push(x0.clone());
    for k in 0..=t {
        let x = &states[k];
        let mut z = &model.c * x + &model.dv * &v_seq[k] + &model.g;
        if k < t {
            z += &d_u * &u_seq[k] + &d_d * &d_seq[k];
        }
        outputs.push(z);
        if k < t {
            let x_next =
                &model.a * x + &b_u * &u_seq[k] + &b_d * &d_seq[k] + &model.bw * &w_seq[k] + &model.f;
            states.push(x_next);
        }
    }
    Ok((states, outputs))
}

// --------------------------------------------------------------------- //
// Pair stack
// --------------------------------------------------------------------- //

/// Everything one model pair contributes to the designs: the inner-problem
/// inequality system and the individual blocks it was assembled from.
///
/// The concatenated uncertainty is `x̄ = [x0_i; x0_j; d_i; d_j; w_i; w_j;
/// v_i; v_j]` with v over k = 0..T. Rows of `r_mat` come in the order
/// x-responsibility (both models), y-responsibility (both models), then the
/// ± output-difference rows; `xi` counts the responsibility rows, `rho` the
/// difference rows.
#[derive(Clone, Debug)]
pub struct StackedPair {
    pub pair: (usize, usize),
    pub t: usize,
    /// Column count of `h_xbar` and `lambda` (length of x̄).
    pub eta: usize,
    /// Row count of `h_xbar`.
    pub kappa: usize,
    /// Responsibility rows of `r_mat`.
    pub xi: usize,
    /// Output-difference rows of `r_mat`.
    pub rho: usize,
    /// Controlled-input width T m_u.
    pub nu: usize,

    /// Output-side state map `diag(a_out_i, a_out_j)` (includes k = 0).
    pub a_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub f_tilde: DVector<f64>,
    pub g_tilde: DVector<f64>,
    pub gamma_u: DMatrix<f64>,
    pub gamma_d: DMatrix<f64>,
    pub gamma_w: DMatrix<f64>,
    pub d_bar_u: DMatrix<f64>,
    pub d_bar_d: DMatrix<f64>,
    pub d_bar_v: DMatrix<f64>,
    /// ± output-difference operator `[[E_i, -E_j], [-E_i, E_j]]`.
    pub e_bar: DMatrix<f64>,
    pub f_bar_u: DMatrix<f64>,
    pub f_bar_d: DMatrix<f64>,
    pub f_bar_v: DMatrix<f64>,
    pub g_bar: DVector<f64>,
    /// `e_bar [a_bar gamma_d gamma_w 0] + [0 f_bar_d 0 f_bar_v]`.
    pub lambda: DMatrix<f64>,
    /// Responsibility rows over x̄ and their u-coefficients/constants.
    pub h_x: DMatrix<f64>,
    pub h_y: DMatrix<f64>,
    pub h_x_const: DVector<f64>,
    pub h_y_const: DVector<f64>,
    pub s_x: DMatrix<f64>,
    pub s_y: DMatrix<f64>,
    /// Assembled inner-problem system: `r_mat x̄ <= [0; 1] δ + r_vec - s_mat u`.
    pub r_mat: DMatrix<f64>,
    pub r_vec: DVector<f64>,
    pub s_mat: DMatrix<f64>,
    /// Uncertainty-domain polytope `h_xbar x̄ <= h_xbar_rhs`.
    pub h_xbar: DMatrix<f64>,
    pub h_xbar_rhs: DVector<f64>,
}

impl StackedPair {
    pub fn dump_json(&self) -> Value {
        json!({
            "pair": [self.pair.0, self.pair.1],
            "t": self.t,
            "dims": {"eta": self.eta, "kappa": self.kappa, "xi": self.xi, "rho": self.rho},
            "lambda": matrix_json(&self.lambda),
            "e_bar": matrix_json(&self.e_bar),
            "f_bar_u": matrix_json(&self.f_bar_u),
            "f_bar_d": matrix_json(&self.f_bar_d),
            "f_bar_v": matrix_json(&self.f_bar_v),
            "g_bar": vector_json(&self.g_bar),
            "r_mat": matrix_json(&self.r_mat),
            "r_vec": vector_json(&self.r_vec),
            "s_mat": matrix_json(&self.s_mat),
            "h_xbar": matrix_json(&self.h_xbar),
            "h_xbar_rhs": vector_json(&self.h_xbar_rhs),
        })
    }

    /// Widths of the [x0, d, w, v] column sections of x̄ (both models).
    pub fn xbar_sections(&self) -> [usize; 4] {
        let n2 = self.a_bar.ncols();
        let d2 = self.gamma_d.ncols();
        let w2 = self.gamma_w.ncols();
        let v2 = self.eta - n2 - d2 - w2;
        [n2, d2, w2, v2]
    }
}

/// Stack per-step polytope rows over a horizon: `diag_T { set.h_mat }`.
fn stack_set(set: &Polytope, steps: usize) -> (DMatrix<f64>, DVector<f64>) {
    (diag_t(&set.h_mat, steps), vcat(&vec![set.h_vec.clone(); steps]))
}


/// Assemble one pair's inner-problem system.
pub fn stack_pair(scenario: &Scenario, i: usize, j: usize) -> StackedPair {
    let t = scenario.horizon;
    let mi = &scenario.models[i];
    let mj = &scenario.models[j];
    let si = stack_single(mi, t);
    let sj = stack_single(mj, t);
    let p = mi.p();
    let rho = 2 * (t + 1) * p;

    let a_bar = block_diag(&[si.a_out(), sj.a_out()]);
    let c_bar = block_diag(&[si.e.clone(), sj.e.clone()]);
    let f_tilde = vcat(&[si.f_out(), sj.f_out()]);
    let g_tilde = vcat(&[si.g_tilde.clone(), sj.g_tilde.clone()]);
    let gamma_u = vstack(&[si.gamma_out(&si.gamma_u), sj.gamma_out(&sj.gamma_u)]);
    let gamma_d = block_diag(&[si.gamma_out(&si.gamma_d), sj.gamma_out(&sj.gamma_d)]);
    let gamma_w = block_diag(&[si.gamma_out(&si.gamma_w), sj.gamma_out(&sj.gamma_w)]);
    let d_bar_u = vstack(&[si.f_u.clone(), sj.f_u.clone()]);
    let d_bar_d = block_diag(&[si.f_d.clone(), sj.f_d.clone()]);
    let d_bar_v = block_diag(&[si.f_v.clone(), sj.f_v.clone()]);

    // ± difference operators.
    let pm = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> DMatrix<f64> {
        vstack(&[hstack(&[a.clone(), -b]), hstack(&[-a, b.clone()])])
    };
    let e_bar = pm(&si.e, &sj.e);
    let f_bar_d = pm(&si.f_d, &sj.f_d);
    let f_bar_v = pm(&si.f_v, &sj.f_v);
    let f_bar_u = vstack(&[&si.f_u - &sj.f_u, &sj.f_u - &si.f_u]);
    let g_diff = &si.g_tilde - &sj.g_tilde;
    let g_bar = vcat(&[g_diff.clone(), -g_diff]);

    let zeros_v = DMatrix::zeros(a_bar.nrows(), d_bar_v.ncols());
    let state_map = hstack(&[a_bar.clone(), gamma_d.clone(), gamma_w.clone(), zeros_v]);
    let feed = hstack(&[
        DMatrix::zeros(rho, a_bar.ncols()),
        f_bar_d.clone(),
        DMatrix::zeros(rho, gamma_w.ncols()),
        f_bar_v.clone(),
    ]);
    let lambda = &e_bar * &state_map + feed;
    let eta = lambda.ncols();

    // Responsibility rows: P̄_* (diag over the pair, diag over time).
    let resp = |set_i: &Polytope, set_j: &Polytope, m_i: &DMatrix<f64>, m_j: &DMatrix<f64>,
                gd_i: &DMatrix<f64>, gd_j: &DMatrix<f64>, gw_i: &DMatrix<f64>, gw_j: &DMatrix<f64>,
                gu_i: &DMatrix<f64>, gu_j: &DMatrix<f64>, ft_i: &DVector<f64>, ft_j: &DVector<f64>|
     -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (p_i, rhs_i) = stack_set(set_i, t);
        let (p_j, rhs_j) = stack_set(set_j, t);
        let p_bar = block_diag(&[p_i, p_j]);
        let p_rhs = vcat(&[rhs_i, rhs_j]);
        let m_pair = block_diag(&[m_i.clone(), m_j.clone()]);
        let gd_pair = block_diag(&[gd_i.clone(), gd_j.clone()]);
        let gw_pair = block_diag(&[gw_i.clone(), gw_j.clone()]);
        let gu_pair = vstack(&[gu_i.clone(), gu_j.clone()]);
        let ft_pair = vcat(&[ft_i.clone(), ft_j.clone()]);
        let v_cols = d_bar_v.ncols();
        // v columns are all zero for responsibility rows
        let h_partial = &p_bar * hstack(&[m_pair, gd_pair, gw_pair]);
        let h = hstack(&[h_partial, DMatrix::zeros(p_bar.nrows(), v_cols)]);
        let s = &p_bar * gu_pair;
        let c = p_rhs - &p_bar * ft_pair;
        (h, c, s)
    };
    let (h_x, h_x_const, s_x) = resp(
        &mi.x_set, &mj.x_set, &si.m_x, &sj.m_x, &si.gamma_xd, &sj.gamma_xd, &si.gamma_xw,
        &sj.gamma_xw, &si.gamma_xu, &sj.gamma_xu, &si.f_tilde_x, &sj.f_tilde_x,
    );
    let (h_y, h_y_const, s_y) = resp(
        &mi.y_set, &mj.y_set, &si.m_y, &sj.m_y, &si.gamma_yd, &sj.gamma_yd, &si.gamma_yw,
        &sj.gamma_yw, &si.gamma_yu, &sj.gamma_yu, &si.f_tilde_y, &sj.f_tilde_y,
    );
    let xi = h_x.nrows() + h_y.nrows();

    // Separation rows: lambda x̄ <= δ 1 - e_bar f_tilde - g_bar - (e_bar gamma_u + f_bar_u) u.
    let lam_const = -(&e_bar * &f_tilde) - &g_bar;
    let lam_u = &e_bar * &gamma_u + &f_bar_u;

    let r_mat = vstack(&[h_x.clone(), h_y.clone(), lambda.clone()]);
    let r_vec = vcat(&[h_x_const.clone(), h_y_const.clone(), lam_const]);
    let s_mat = vstack(&[s_x.clone(), s_y.clone(), lam_u]);

    // Uncertainty domain: x0 in X0 (per model), d in D^T (per model),
    // w in W^T, v in V^(T+1).
    let (p0, p0_rhs) = stack_set(&scenario.x0_set, 1);
    let (qd_i, qd_i_rhs) = stack_set(&mi.d_set, t);
    let (qd_j, qd_j_rhs) = stack_set(&mj.d_set, t);
    let (qw, qw_rhs) = stack_set(&scenario.w_set, t);
    let (qv, qv_rhs) = stack_set(&scenario.v_set, t + 1);
    let h_xbar = block_diag(&[
        p0.clone(),
        p0.clone(),
        qd_i,
        qd_j,
        qw.clone(),
        qw.clone(),
        qv.clone(),
        qv.clone(),
    ]);
    let h_xbar_rhs = vcat(&[
        p0_rhs.clone(),
        p0_rhs,
        qd_i_rhs,
        qd_j_rhs,
        qw_rhs.clone(),
        qw_rhs,
        qv_rhs.clone(),
        qv_rhs,
    ]);
    debug_assert_eq!(h_xbar.ncols(), eta, "uncertainty polytope must match x̄ layout");
    let kappa = h_xbar.nrows();

    StackedPair {
        pair: (i, j),
        t,
        eta,
        kappa,
        xi,
        rho,
        nu: t * mi.m_u,
        a_bar,
        c_bar,
        f_tilde,
        g_tilde,
        gamma_u,
        gamma_d,
        gamma_w,
        d_bar_u,
        d_bar_d,
        d_bar_v,
        e_bar,
        f_bar_u,
        f_bar_d,
        f_bar_v,
        g_bar,
        lambda,
        h_x,
        h_y,
        h_x_const,
        h_y_const,
        s_x,
        s_y,
        r_mat,
        r_vec,
        s_mat,
        h_xbar,
        h_xbar_rhs,
    }
}

// --------------------------------------------------------------------- //
// Global (all-model) stack
// --------------------------------------------------------------------- //

/// All-model concatenations for the conservative design. The uncertainty is
/// `x̄ = [x0 (all models); d (all); w (all); v (all)]`, the difference
/// ladder `e_ladder` has one block row per pair (i, j), i < j, and
/// `lambda` maps x̄ to the ± difference rows across all pairs.
#[derive(Clone, Debug)]
pub struct StackedGlobal {
    pub t: usize,
    pub num_models: usize,
    pub epsilon: f64,
    pub eta: usize,

    pub a_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub f_tilde: DVector<f64>,
    pub g_tilde: DVector<f64>,
    pub gamma_u: DMatrix<f64>,
    pub gamma_d: DMatrix<f64>,
    pub gamma_w: DMatrix<f64>,
    pub d_bar_u: DMatrix<f64>,
    pub d_bar_d: DMatrix<f64>,
    pub d_bar_v: DMatrix<f64>,

    /// Pairwise difference ladder (one block row per pair).
    pub e_ladder: DMatrix<f64>,
    pub f_u_ladder: DMatrix<f64>,
    pub f_d_ladder: DMatrix<f64>,
    pub f_v_ladder: DMatrix<f64>,
    pub g_ladder: DVector<f64>,
    /// Doubled ± forms.
    pub e_bar: DMatrix<f64>,
    pub f_bar_u: DMatrix<f64>,
    pub f_bar_d: DMatrix<f64>,
    pub f_bar_v: DMatrix<f64>,
    pub g_bar: DVector<f64>,
    pub lambda: DMatrix<f64>,

    pub h_x: DMatrix<f64>,
    pub h_y: DMatrix<f64>,
    pub h_x_const: DVector<f64>,
    pub h_y_const: DVector<f64>,
    pub s_x: DMatrix<f64>,
    pub s_y: DMatrix<f64>,
    pub h_xbar: DMatrix<f64>,
    pub h_xbar_rhs: DVector<f64>,

    /// λ(u, s) = lambda_const - s - lambda_u · u (per ± difference row).
    pub lambda_const: DVector<f64>,
    pub lambda_u: DMatrix<f64>,
    /// `P̄_y Γ_yu`: nonzero means the conservative design is restricted.
    pub py_gamma_yu: DMatrix<f64>,
}

impl StackedGlobal {
    /// Robust-constraint matrix `R = [-Λ; H_x]`.
    pub fn r_mat(&self) -> DMatrix<f64> {
        vstack(&[-self.lambda.clone(), self.h_x.clone()])
    }

    /// Domain matrix `Φ = [H_y; H_x̄]`.
    pub fn phi_mat(&self) -> DMatrix<f64> {
        vstack(&[self.h_y.clone(), self.h_xbar.clone()])
    }

    /// u-independent part of ψ: `φ = [h_y const; h_x̄]`. Equals ψ(u) exactly
    /// when `P̄_y Γ_yu = 0`.
    pub fn phi_rhs(&self) -> DVector<f64> {
        vcat(&[self.h_y_const.clone(), self.h_xbar_rhs.clone()])
    }

    pub fn suboptimality_norm(&self) -> f64 {
        self.py_gamma_yu.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn dump_json(&self) -> Value {
        json!({
            "t": self.t,
            "num_models": self.num_models,
            "lambda": matrix_json(&self.lambda),
            "e_ladder": matrix_json(&self.e_ladder),
            "g_ladder": vector_json(&self.g_ladder),
            "h_x": matrix_json(&self.h_x),
            "h_y": matrix_json(&self.h_y),
            "h_xbar": matrix_json(&self.h_xbar),
            "h_xbar_rhs": vector_json(&self.h_xbar_rhs),
            "lambda_const": vector_json(&self.lambda_const),
            "lambda_u": matrix_json(&self.lambda_u),
            "py_gamma_yu": matrix_json(&self.py_gamma_yu),
        })
    }
}

/// Assemble the all-model stack for the conservative design.
pub fn stack_all(scenario: &Scenario) -> StackedGlobal {
    let t = scenario.horizon;
    let nm = scenario.num_models();
    let p = scenario.p();
    let singles: Vec<StackedSingle> =
        scenario.models.iter().map(|m| stack_single(m, t)).collect();

    let a_bar = block_diag(&singles.iter().map(|s| s.a_out()).collect::<Vec<_>>());
    let c_bar = block_diag(&singles.iter().map(|s| s.e.clone()).collect::<Vec<_>>());
    let f_tilde = vcat(&singles.iter().map(|s| s.f_out()).collect::<Vec<_>>());
    let g_tilde = vcat(&singles.iter().map(|s| s.g_tilde.clone()).collect::<Vec<_>>());
    let gamma_u = vstack(&singles.iter().map(|s| s.gamma_out(&s.gamma_u)).collect::<Vec<_>>());
    let gamma_d = block_diag(&singles.iter().map(|s| s.gamma_out(&s.gamma_d)).collect::<Vec<_>>());
    let gamma_w = block_diag(&singles.iter().map(|s| s.gamma_out(&s.gamma_w)).collect::<Vec<_>>());
    let d_bar_u = vstack(&singles.iter().map(|s| s.f_u.clone()).collect::<Vec<_>>());
    let d_bar_d = block_diag(&singles.iter().map(|s| s.f_d.clone()).collect::<Vec<_>>());
    let d_bar_v = block_diag(&singles.iter().map(|s| s.f_v.clone()).collect::<Vec<_>>());

    // Difference ladder over pairs.
    let pairs = scenario.pairs();
    let zp = (t + 1) * p;
    let state_cols = a_bar.nrows();
    let mut e_ladder = DMatrix::zeros(pairs.len() * zp, state_cols);
    let mut f_u_ladder = DMatrix::zeros(pairs.len() * zp, t * scenario.m_u());
    let mut f_d_ladder = DMatrix::zeros(pairs.len() * zp, d_bar_d.ncols());
    let mut f_v_ladder = DMatrix::zeros(pairs.len() * zp, d_bar_v.ncols());
    let mut g_ladder = DVector::zeros(pairs.len() * zp);
    let state_block = (t + 1) * scenario.n();
    let d_width: Vec<usize> = scenario.models.iter().map(|m| t * m.m_d).collect();
    let d_offset: Vec<usize> = d_width
        .iter()
        .scan(0usize, |acc, w| {
            let at = *acc;
            *acc += w;
            Some(at)
        })
        .collect();
    let v_block = (t + 1) * scenario.m_v();
    for (q, &(i, j)) in pairs.iter().enumerate() {
        let row = q * zp;
        e_ladder.view_mut((row, i * state_block), (zp, state_block)).copy_from(&singles[i].e);
        e_ladder
            .view_mut((row, j * state_block), (zp, state_block))
            .copy_from(&(-&singles[j].e));
        f_u_ladder
            .view_mut((row, 0), (zp, t * scenario.m_u()))
            .copy_from(&(&singles[i].f_u - &singles[j].f_u));
        f_d_ladder
            .view_mut((row, d_offset[i]), (zp, d_width[i]))
            .copy_from(&singles[i].f_d);
        f_d_ladder
            .view_mut((row, d_offset[j]), (zp, d_width[j]))
            .copy_from(&(-&singles[j].f_d));
        f_v_ladder.view_mut((row, i * v_block), (zp, v_block)).copy_from(&singles[i].f_v);
        f_v_ladder
            .view_mut((row, j * v_block), (zp, v_block))
            .copy_from(&(-&singles[j].f_v));
        g_ladder
            .rows_mut(row, zp)
            .copy_from(&(&singles[i].g_tilde - &singles[j].g_tilde));
    }
    let e_bar = vstack(&[e_ladder.clone(), -e_ladder.clone()]);
    let f_bar_u = vstack(&[f_u_ladder.clone(), -f_u_ladder.clone()]);
    let f_bar_d = vstack(&[f_d_ladder.clone(), -f_d_ladder.clone()]);
    let f_bar_v = vstack(&[f_v_ladder.clone(), -f_v_ladder.clone()]);
    let g_bar = vcat(&[g_ladder.clone(), -g_ladder.clone()]);

    let rho = e_bar.nrows();
    let zeros_v = DMatrix::zeros(a_bar.nrows(), d_bar_v.ncols());
    let state_map = hstack(&[a_bar.clone(), gamma_d.clone(), gamma_w.clone(), zeros_v]);
    let feed = hstack(&[
        DMatrix::zeros(rho, a_bar.ncols()),
        f_bar_d.clone(),
        DMatrix::zeros(rho, gamma_w.ncols()),
        f_bar_v.clone(),
    ]);
    let lambda = &e_bar * &state_map + feed;
    let eta = lambda.ncols();

    // Responsibility rows across all models.
    let resp = |sets: Vec<&Polytope>, ms: Vec<&DMatrix<f64>>, gds: Vec<&DMatrix<f64>>,
                gws: Vec<&DMatrix<f64>>, gus: Vec<&DMatrix<f64>>, fts: Vec<&DVector<f64>>|
     -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let stacked: Vec<(DMatrix<f64>, DVector<f64>)> =
            sets.iter().map(|s| stack_set(s, t)).collect();
        let p_bar = block_diag(&stacked.iter().map(|(m, _)| m.clone()).collect::<Vec<_>>());
        let p_rhs = vcat(&stacked.iter().map(|(_, v)| v.clone()).collect::<Vec<_>>());
        let m_all = block_diag(&ms.iter().map(|m| (*m).clone()).collect::<Vec<_>>());
        let gd_all = block_diag(&gds.iter().map(|m| (*m).clone()).collect::<Vec<_>>());
        let gw_all = block_diag(&gws.iter().map(|m| (*m).clone()).collect::<Vec<_>>());
        let gu_all = vstack(&gus.iter().map(|m| (*m).clone()).collect::<Vec<_>>());
        let ft_all = vcat(&fts.iter().map(|v| (*v).clone()).collect::<Vec<_>>());
        let h = hstack(&[
            &p_bar * hstack(&[m_all, gd_all, gw_all]),
            DMatrix::zeros(p_bar.nrows(), d_bar_v.ncols()),
        ]);
        let s = &p_bar * &gu_all;
        let c = p_rhs - &p_bar * ft_all;
        let py_gamma = &p_bar * gu_all;
        (h, c, s, py_gamma)
    };
    let (h_x, h_x_const, s_x, _) = resp(
        scenario.models.iter().map(|m| &m.x_set).collect(),
        singles.iter().map(|s| &s.m_x).collect(),
        singles.iter().map(|s| &s.gamma_xd).collect(),
        singles.iter().map(|s| &s.gamma_xw).collect(),
        singles.iter().map(|s| &s.gamma_xu).collect(),
        singles.iter().map(|s| &s.f_tilde_x).collect(),
    );
    let (h_y, h_y_const, s_y, py_gamma_yu) = resp(
        scenario.models.iter().map(|m| &m.y_set).collect(),
        singles.iter().map(|s| &s.m_y).collect(),
        singles.iter().map(|s| &s.gamma_yd).collect(),
        singles.iter().map(|s| &s.gamma_yw).collect(),
        singles.iter().map(|s| &s.gamma_yu).collect(),
        singles.iter().map(|s| &s.f_tilde_y).collect(),
    );

    // Uncertainty domain across all models.
    let (p0, p0_rhs) = stack_set(&scenario.x0_set, 1);
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut rhs: Vec<DVector<f64>> = Vec::new();
    for _ in 0..nm {
        blocks.push(p0.clone());
        rhs.push(p0_rhs.clone());
    }
    for m in &scenario.models {
        let (qd, qd_rhs) = stack_set(&m.d_set, t);
        blocks.push(qd);
        rhs.push(qd_rhs);
    }
    for _ in 0..nm {
        let (qw, qw_rhs) = stack_set(&scenario.w_set, t);
        blocks.push(qw);
        rhs.push(qw_rhs);
    }
    for _ in 0..nm {
        let (qv, qv_rhs) = stack_set(&scenario.v_set, t + 1);
        blocks.push(qv);
        rhs.push(qv_rhs);
    }
    let h_xbar = block_diag(&blocks);
    let h_xbar_rhs = vcat(&rhs);
    debug_assert_eq!(h_xbar.ncols(), eta);

    // λ(u, s) = ε 1 - s - ḡ - (Ē Γ_u + F̄_u) u - Ē f̃.
    let lambda_const = DVector::from_element(rho, scenario.epsilon) - &g_bar - &e_bar * &f_tilde;
    let lambda_u = &e_bar * &gamma_u + &f_bar_u;

    StackedGlobal {
        t,
        num_models: nm,
        epsilon: scenario.epsilon,
        eta,
        a_bar,
        c_bar,
        f_tilde,
        g_tilde,
        gamma_u,
        gamma_d,
        gamma_w,
        d_bar_u,
        d_bar_d,
        d_bar_v,
        e_ladder,
        f_u_ladder,
        f_d_ladder,
        f_v_ladder,
        g_ladder,
        e_bar,
        f_bar_u,
        f_bar_d,
        f_bar_v,
        g_bar,
        lambda,
        h_x,
        h_y,
        h_x_const,
        h_y_const,
        s_x,
        s_y,
        h_xbar,
        h_xbar_rhs,
        lambda_const,
        lambda_u,
        py_gamma_yu,
    }
}

/// Predicted stacked output for one model of a pair/global stack, used by
/// oracle tests: `z = C̄(Ā x0 + Γ u + ...) + D̄ u + ... + g̃` evaluated per
/// model via its [`StackedSingle`].
pub fn predict_outputs(
    single: &StackedSingle,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    w: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let states = single.a_out() * x0
        + single.gamma_out(&single.gamma_u) * u
        + single.gamma_out(&single.gamma_d) * d
        + single.gamma_out(&single.gamma_w) * w
        + single.f_out();
    &single.e * states + &single.f_u * u + &single.f_d * d + &single.f_v * v + &single.g_tilde
}

/// Predicted stacked state (k = 1..T), the oracle counterpart of
/// [`simulate`]'s state trajectory.
pub fn predict_states(
    single: &StackedSingle,
    x0: &DVector<f64>,
    u: &DVector<f64>,
    d: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    &single.a_bar * x0
        + &single.gamma_u * u
        + &single.gamma_d * d
        + &single.gamma_w * w
        + &single.f_tilde
}
