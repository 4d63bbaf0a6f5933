//! Dense bounded-variable simplex.
//!
//! Two-phase primal method for cold solves, dual method for warm restarts
//! after bound changes (the branch-and-bound workhorse). The basis inverse is
//! kept explicitly and refreshed by Gauss-Jordan refactorization every
//! `REFACTOR_EVERY` pivots or on numerical trouble. Bland's rule kicks in
//! after a run of degenerate pivots.

use super::{LpSolution, LpStatus, MilpProblem, RowSense, SolveError, SolverParams};

const REFACTOR_EVERY: u32 = 100;
const PIVOT_TOL: f64 = 1e-9;
const BLAND_AFTER: u32 = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VStat {
    Basic,
    AtLower,
    AtUpper,
    FreeAtZero,
}

/// Internal standard-form LP: all rows equalities (slacks appended for `<=`
/// rows), every column carrying finite or infinite bounds.
pub(crate) struct LpCore {
    nrows: usize,
    /// Sparse columns of the equality matrix.
    cols: Vec<Vec<(u32, f64)>>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    /// Number of structural (caller-visible) variables.
    nstruct: usize,
    /// Columns `>= artificial_start` are phase-1 artificials.
    artificial_start: usize,

    stat: Vec<VStat>,
    x: Vec<f64>,
    basic_in_row: Vec<usize>,
    /// Row-major `nrows x nrows` basis inverse.
    binv: Vec<f64>,
    pivots_since_refactor: u32,

    // scratch
    work_alpha: Vec<f64>,
    work_y: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct BasisSnapshot {
    basic_in_row: Vec<u32>,
    stat: Vec<u8>,
}

#[derive(Clone, Debug)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible { farkas_rows: Vec<usize> },
    Unbounded { ray: Vec<f64> },
}

impl LpCore {
    /// Build the standard form from a problem, ignoring integrality and
    /// SOS-1 groups (LP relaxation). Binary variables keep their [0,1]
    /// bounds.
    pub(crate) fn from_problem(p: &MilpProblem) -> LpCore {
        let nstruct = p.vars.len();
        let nrows = p.rows.len();
        let n_slacks = p.rows.iter().filter(|r| r.sense == RowSense::Le).count();
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nstruct + n_slacks];
        let mut lb = Vec::with_capacity(nstruct + n_slacks);
        let mut ub = Vec::with_capacity(nstruct + n_slacks);
        let mut cost = vec![0.0; nstruct + n_slacks];
        for (j, v) in p.vars.iter().enumerate() {
            lb.push(v.lb);
            ub.push(v.ub);
            let _ = j;
        }
        for &(j, c) in &p.objective {
            cost[j] += c;
        }
        let mut rhs = Vec::with_capacity(nrows);
        let mut slack = nstruct;
        for (r, row) in p.rows.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                if c != 0.0 {
                    cols[j].push((r as u32, c));
                }
            }
            if row.sense == RowSense::Le {
                cols[slack].push((r as u32, 1.0));
                lb.push(0.0);
                ub.push(f64::INFINITY);
                slack += 1;
            }
            rhs.push(row.rhs);
        }
        // Merge duplicate indices inside each column so the dense kernels see
        // each (row, col) entry once.
        for col in cols.iter_mut() {
            col.sort_by_key(|e| e.0);
            let mut merged: Vec<(u32, f64)> = Vec::with_capacity(col.len());
            for &(r, v) in col.iter() {
                if let Some(last) = merged.last_mut() {
                    if last.0 == r {
                        last.1 += v;
                        continue;
                    }
                }
                merged.push((r, v));
            }
            merged.retain(|e| e.1 != 0.0);
            *col = merged;
        }
        let ncols = cols.len();
        LpCore {
            nrows,
            cols,
            lb,
            ub,
            cost,
            rhs,
            nstruct,
            artificial_start: ncols,
            stat: vec![VStat::AtLower; ncols],
            x: vec![0.0; ncols],
            basic_in_row: vec![usize::MAX; nrows],
            binv: Vec::new(),
            pivots_since_refactor: 0,
            work_alpha: vec![0.0; nrows],
            work_y: vec![0.0; nrows],
        }
    }

    pub(crate) fn num_rows(&self) -> usize {
        self.nrows
    }

    /// Tighten or relax the bounds of a structural variable.
    pub(crate) fn set_bounds(&mut self, var: usize, lb: f64, ub: f64) {
        debug_assert!(var < self.nstruct);
        self.lb[var] = lb;
        self.ub[var] = ub;
    }

    pub(crate) fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lb[var], self.ub[var])
    }

    pub(crate) fn primal(&self) -> &[f64] {
        &self.x[..self.nstruct]
    }

    pub(crate) fn objective_value(&self) -> f64 {
        (0..self.nstruct).map(|j| self.cost[j] * self.x[j]).sum()
    }

    /// Row multipliers with the `c + A' mu` sign convention (binding `<=`
    /// rows get nonnegative multipliers in a minimization).
    pub(crate) fn row_duals(&mut self) -> Vec<f64> {
        self.compute_duals_into();
        self.work_y.iter().map(|&y| -y).collect()
    }

    pub(crate) fn snapshot(&self) -> BasisSnapshot {
        BasisSnapshot {
            basic_in_row: self.basic_in_row.iter().map(|&b| b as u32).collect(),
            stat: self
                .stat
                .iter()
                .map(|s| match s {
                    VStat::Basic => 0u8,
                    VStat::AtLower => 1,
                    VStat::AtUpper => 2,
                    VStat::FreeAtZero => 3,
                })
                .collect(),
        }
    }

    /// Restore a previously captured basis. Artificial columns that the
    /// snapshot predates are pinned nonbasic. Fails if the basis matrix has
    /// become singular.
    pub(crate) fn load_snapshot(&mut self, snap: &BasisSnapshot) -> Result<(), SolveError> {
        for (j, s) in self.stat.iter_mut().enumerate() {
            *s = if j < snap.stat.len() {
                match snap.stat[j] {
                    0 => VStat::Basic,
                    1 => VStat::AtLower,
                    2 => VStat::AtUpper,
                    _ => VStat::FreeAtZero,
                }
            } else {
                VStat::AtLower
            };
        }
        for (r, &b) in snap.basic_in_row.iter().enumerate() {
            if b as usize >= self.cols.len() {
                return Err(SolveError::Numerical("basis snapshot references unknown columns".into()));
            }
            self.basic_in_row[r] = b as usize;
        }
        self.refactorize()?;
        self.set_nonbasic_values();
        self.recompute_basics();
        Ok(())
    }

    fn set_nonbasic_values(&mut self) {
        for j in 0..self.cols.len() {
            match self.stat[j] {
                VStat::AtLower => {
                    self.x[j] = if self.lb[j].is_finite() {
                        self.lb[j]
                    } else if self.ub[j].is_finite() {
                        // lower bound vanished; park at the other bound
                        self.stat[j] = VStat::AtUpper;
                        self.ub[j]
                    } else {
                        self.stat[j] = VStat::FreeAtZero;
                        0.0
                    };
                }
                VStat::AtUpper => {
                    self.x[j] = if self.ub[j].is_finite() {
                        self.ub[j]
                    } else if self.lb[j].is_finite() {
                        self.stat[j] = VStat::AtLower;
                        self.lb[j]
                    } else {
                        self.stat[j] = VStat::FreeAtZero;
                        0.0
                    };
                }
                VStat::FreeAtZero => {
                    if self.lb[j].is_finite() || self.ub[j].is_finite() {
                        // bound appeared on a formerly free column
                        if self.lb[j].is_finite() {
                            self.stat[j] = VStat::AtLower;
                            self.x[j] = self.lb[j];
                        } else {
                            self.stat[j] = VStat::AtUpper;
                            self.x[j] = self.ub[j];
                        }
                    } else {
                        self.x[j] = 0.0;
                    }
                }
                VStat::Basic => {}
            }
        }
    }

    /// x_B = B^-1 (b - N x_N)
    fn recompute_basics(&mut self) {
        let m = self.nrows;
        let mut resid = self.rhs.clone();
        for j in 0..self.cols.len() {
            if self.stat[j] != VStat::Basic && self.x[j] != 0.0 {
                for &(r, v) in &self.cols[j] {
                    resid[r as usize] -= v * self.x[j];
                }
            }
        }
        for r in 0..m {
            let mut acc = 0.0;
            let row = &self.binv[r * m..(r + 1) * m];
            for (k, &res) in resid.iter().enumerate() {
                acc += row[k] * res;
            }
            self.x[self.basic_in_row[r]] = acc;
        }
    }

    fn refactorize(&mut self) -> Result<(), SolveError> {
        let m = self.nrows;
        self.binv = vec![0.0; m * m];
        for r in 0..m {
            self.binv[r * m + r] = 1.0;
        }
        // Gauss-Jordan on [B | I], B assembled dense column-wise.
        let mut bmat = vec![0.0; m * m];
        for (r, &j) in self.basic_in_row.iter().enumerate() {
            debug_assert!(j != usize::MAX, "row {r} has no basic column");
            for &(i, v) in &self.cols[j] {
                bmat[i as usize * m + r] = v;
            }
        }
        for k in 0..m {
            let mut piv_row = k;
            let mut piv_val = bmat[k * m + k].abs();
            for r in (k + 1)..m {
                let cand = bmat[r * m + k].abs();
                if cand > piv_val {
                    piv_val = cand;
                    piv_row = r;
                }
            }
            if piv_val < 1e-12 {
                return Err(SolveError::Numerical(format!(
                    "singular basis during refactorization at column {k}"
                )));
            }
            if piv_row != k {
                for c in 0..m {
                    bmat.swap(k * m + c, piv_row * m + c);
                    self.binv.swap(k * m + c, piv_row * m + c);
                }
            }
            let inv_p = 1.0 / bmat[k * m + k];
            for c in 0..m {
                bmat[k * m + c] *= inv_p;
                self.binv[k * m + c] *= inv_p;
            }
            for r in 0..m {
                if r == k {
                    continue;
                }
                let f = bmat[r * m + k];
                if f != 0.0 {
                    for c in 0..m {
                        bmat[r * m + c] -= f * bmat[k * m + c];
                        self.binv[r * m + c] -= f * self.binv[k * m + c];
                    }
                }
            }
        }
        // binv now holds the inverse of B in "column of row-position" order:
        // B[:, r] = column basic_in_row[r]; binv * B = I.
        self.pivots_since_refactor = 0;
        Ok(())
    }

    /// alpha = B^-1 a_j into work_alpha.
    fn ftran(&mut self, j: usize) {
        let m = self.nrows;
        self.work_alpha.iter_mut().for_each(|v| *v = 0.0);
        for &(r, v) in &self.cols[j] {
            let r = r as usize;
            for i in 0..m {
                self.work_alpha[i] += self.binv[i * m + r] * v;
            }
        }
    }

    /// y' = c_B' B^-1 into work_y.
    fn compute_duals_into(&mut self) {
        let m = self.nrows;
        self.work_y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..m {
            let cb = self.cost[self.basic_in_row[r]];
            if cb != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (i, &bv) in row.iter().enumerate() {
                    self.work_y[i] += cb * bv;
                }
            }
        }
    }

    fn reduced_cost(&self, j: usize) -> f64 {
        let mut d = self.cost[j];
        for &(r, v) in &self.cols[j] {
            d -= self.work_y[r as usize] * v;
        }
        d
    }

    /// Elementary pivot: entering column `q` replaces the basic column in
    /// row `r`. `alpha` must hold B^-1 a_q.
    fn update_basis(&mut self, r: usize, q: usize, leave_to: VStat) {
        let m = self.nrows;
        let piv = self.work_alpha[r];
        debug_assert!(piv.abs() > PIVOT_TOL * 0.1);
        let inv_p = 1.0 / piv;
        // Row r of binv scales; other rows eliminate.
        for c in 0..m {
            self.binv[r * m + c] *= inv_p;
        }
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = self.work_alpha[i];
            if f != 0.0 {
                for c in 0..m {
                    self.binv[i * m + c] -= f * self.binv[r * m + c];
                }
            }
        }
        let old = self.basic_in_row[r];
        self.stat[old] = leave_to;
        if old >= self.artificial_start {
            // An artificial that has left the basis must never come back.
            self.ub[old] = 0.0;
        }
        self.stat[q] = VStat::Basic;
        self.basic_in_row[r] = q;
        self.pivots_since_refactor += 1;
    }

    fn maybe_refactor(&mut self) -> Result<(), SolveError> {
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactorize()?;
            self.recompute_basics();
        }
        Ok(())
    }

    // ----------------------------------------------------------------- //
    // Primal simplex (phases 1 and 2)
    // ----------------------------------------------------------------- //

    /// Cold solve: build a starting basis from slacks plus artificials,
    /// minimize infeasibility, then the true cost.
    pub(crate) fn solve_primal(&mut self, params: &SolverParams) -> Result<LpOutcome, SolveError> {
        self.drop_artificials();
        // Park structural and slack columns at a finite bound.
        for j in 0..self.cols.len() {
            self.stat[j] = if self.lb[j].is_finite() {
                if self.ub[j].is_finite() && self.ub[j].abs() < self.lb[j].abs() {
                    VStat::AtUpper
                } else {
                    VStat::AtLower
                }
            } else if self.ub[j].is_finite() {
                VStat::AtUpper
            } else {
                VStat::FreeAtZero
            };
        }
        self.set_nonbasic_values();

        let m = self.nrows;
        if m == 0 {
            return Ok(self.solve_unconstrained(params));
        }

        // Residual of each row at the parked point decides the artificial's
        // sign so that it starts feasible (value = |residual| >= 0).
        let mut resid = self.rhs.clone();
        for j in 0..self.cols.len() {
            if self.x[j] != 0.0 {
                for &(r, v) in &self.cols[j] {
                    resid[r as usize] -= v * self.x[j];
                }
            }
        }
        let phase2_cost = self.cost.clone();
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.artificial_start = self.cols.len();
        for r in 0..m {
            let sigma = if resid[r] >= 0.0 { 1.0 } else { -1.0 };
            self.cols.push(vec![(r as u32, sigma)]);
            self.lb.push(0.0);
            self.ub.push(f64::INFINITY);
            self.cost.push(1.0);
            self.x.push(resid[r].abs());
            self.stat.push(VStat::Basic);
            self.basic_in_row[r] = self.cols.len() - 1;
        }
        self.work_alpha = vec![0.0; m];
        self.work_y = vec![0.0; m];
        self.refactorize()?;

        // Phase 1
        self.primal_loop(params)?;
        let infeas: f64 = (self.artificial_start..self.cols.len())
            .map(|j| self.x[j].max(0.0))
            .sum();
        if infeas > params.feas_tol * (1.0 + self.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
            self.compute_duals_into();
            let farkas: Vec<usize> = (0..m).filter(|&r| self.work_y[r].abs() > 1e-9).collect();
            let cost_len = self.cost.len();
            self.cost[self.artificial_start..cost_len].iter_mut().for_each(|c| *c = 0.0);
            self.cost[..phase2_cost.len()].copy_from_slice(&phase2_cost);
            return Ok(LpOutcome::Infeasible { farkas_rows: farkas });
        }

        // Pin artificials at zero and try to pivot basic ones out.
        for j in self.artificial_start..self.cols.len() {
            self.ub[j] = 0.0;
            self.cost[j] = 0.0;
        }
        self.pivot_out_artificials()?;
        self.cost[..phase2_cost.len()].copy_from_slice(&phase2_cost);

        // Phase 2
        self.primal_loop(params)
    }

    /// Degenerate LP with no rows: every column moves to its best bound.
    fn solve_unconstrained(&mut self, _params: &SolverParams) -> LpOutcome {
        let mut ray = vec![0.0; self.nstruct];
        let mut unbounded = false;
        for j in 0..self.nstruct {
            if self.lb[j] > self.ub[j] {
                return LpOutcome::Infeasible { farkas_rows: vec![] };
            }
            let c = self.cost[j];
            if c > 0.0 {
                if self.lb[j].is_finite() {
                    self.x[j] = self.lb[j];
                } else {
                    ray[j] = -1.0;
                    unbounded = true;
                }
            } else if c < 0.0 {
                if self.ub[j].is_finite() {
                    self.x[j] = self.ub[j];
                } else {
                    ray[j] = 1.0;
                    unbounded = true;
                }
            }
        }
        if unbounded {
            LpOutcome::Unbounded { ray }
        } else {
            LpOutcome::Optimal
        }
    }

    fn drop_artificials(&mut self) {
        let keep = self.artificial_start.min(self.cols.len());
        self.cols.truncate(keep);
        self.lb.truncate(keep);
        self.ub.truncate(keep);
        self.cost.truncate(keep);
        self.x.truncate(keep);
        self.stat.truncate(keep);
    }

    fn pivot_out_artificials(&mut self) -> Result<(), SolveError> {
        let m = self.nrows;
        for r in 0..m {
            let b = self.basic_in_row[r];
            if b < self.artificial_start {
                continue;
            }
            // Find any eligible real column with a usable pivot in this row.
            let mut entering = usize::MAX;
            for j in 0..self.artificial_start {
                if self.stat[j] == VStat::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                let mut arj = 0.0;
                for &(i, v) in &self.cols[j] {
                    arj += self.binv[r * m + i as usize] * v;
                }
                if arj.abs() > 1e-7 {
                    entering = j;
                    break;
                }
            }
            if entering == usize::MAX {
                continue; // redundant row; artificial stays basic at zero
            }
            self.ftran(entering);
            let x_enter = self.x[entering];
            self.update_basis(r, entering, VStat::AtLower);
            self.x[entering] = x_enter;
            self.recompute_basics();
            self.maybe_refactor()?;
        }
        Ok(())
    }

    fn primal_loop(&mut self, params: &SolverParams) -> Result<LpOutcome, SolveError> {
        let m = self.nrows;
        let iter_limit = 50_000 + 200 * (m + self.cols.len()) as u64;
        let mut iters: u64 = 0;
        let mut degenerate_run: u32 = 0;
        loop {
            iters += 1;
            if iters > iter_limit {
                return Err(SolveError::Numerical(format!(
                    "primal simplex iteration limit ({iter_limit}) exceeded"
                )));
            }
            let bland = degenerate_run > BLAND_AFTER;
            self.compute_duals_into();

            // Pricing.
            let mut best_j = usize::MAX;
            let mut best_score = params.opt_tol;
            let mut best_dir = 1.0;
            for j in 0..self.cols.len() {
                let st = self.stat[j];
                if st == VStat::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                if j >= self.artificial_start && self.ub[j] == 0.0 {
                    continue;
                }
                let d = self.reduced_cost(j);
                let (score, dir) = match st {
                    VStat::AtLower => (-d, 1.0),
                    VStat::AtUpper => (d, -1.0),
                    VStat::FreeAtZero => (d.abs(), if d > 0.0 { -1.0 } else { 1.0 }),
                    VStat::Basic => unreachable!(),
                };
                if score > best_score {
                    best_score = score;
                    best_j = j;
                    best_dir = dir;
                    if bland {
                        break;
                    }
                }
            }
            if best_j == usize::MAX {
                return Ok(LpOutcome::Optimal);
            }
            let q = best_j;
            let t = best_dir;
            self.ftran(q);

            // Ratio test: the entering variable moves by `step >= 0` in
            // direction `t`; the binding limit is either its own opposite
            // bound (bound flip) or the first basic variable to hit a bound.
            const TIE: f64 = 1e-10;
            let self_limit = if self.lb[q].is_finite() && self.ub[q].is_finite() {
                self.ub[q] - self.lb[q]
            } else {
                f64::INFINITY
            };
            let mut limit = self_limit;
            let mut leave_row = usize::MAX;
            let mut leave_to = VStat::AtLower;
            let mut leave_mag = 0.0f64;
            for r in 0..m {
                let a = self.work_alpha[r];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                let k = self.basic_in_row[r];
                let rate = -t * a; // d x_k / d step
                let (room, to) = if rate > 0.0 {
                    (self.ub[k] - self.x[k], VStat::AtUpper)
                } else {
                    (self.lb[k] - self.x[k], VStat::AtLower)
                };
                if room.is_infinite() {
                    continue;
                }
                let step = (room / rate).max(0.0);
                let replace = if leave_row == usize::MAX {
                    step < limit - TIE
                } else if bland {
                    step < limit - TIE
                        || (step < limit + TIE && k < self.basic_in_row[leave_row])
                } else {
                    step < limit - TIE || (step < limit + TIE && a.abs() > leave_mag)
                };
                if replace {
                    limit = limit.min(step);
                    leave_row = r;
                    leave_to = to;
                    leave_mag = a.abs();
                }
            }

            if !limit.is_finite() {
                // Unbounded: assemble the improving ray.
                let mut ray = vec![0.0; self.nstruct];
                if q < self.nstruct {
                    ray[q] = t;
                }
                for r in 0..m {
                    let k = self.basic_in_row[r];
                    if k < self.nstruct {
                        ray[k] = -t * self.work_alpha[r];
                    }
                }
                return Ok(LpOutcome::Unbounded { ray });
            }

            degenerate_run = if limit <= 1e-10 { degenerate_run + 1 } else { 0 };

            if leave_row == usize::MAX {
                // Bound flip: entering runs to its opposite bound.
                let step = limit;
                for r in 0..m {
                    let a = self.work_alpha[r];
                    if a != 0.0 {
                        let k = self.basic_in_row[r];
                        self.x[k] -= t * step * a;
                    }
                }
                self.x[q] += t * step;
                self.stat[q] = if t > 0.0 { VStat::AtUpper } else { VStat::AtLower };
            } else {
                let step = limit;
                for r in 0..m {
                    let a = self.work_alpha[r];
                    if a != 0.0 {
                        let k = self.basic_in_row[r];
                        self.x[k] -= t * step * a;
                    }
                }
                let k_leave = self.basic_in_row[leave_row];
                self.x[k_leave] = if leave_to == VStat::AtUpper { self.ub[k_leave] } else { self.lb[k_leave] };
                self.x[q] += t * step;
                self.update_basis(leave_row, q, leave_to);
                self.maybe_refactor()?;
            }
        }
    }

    // ----------------------------------------------------------------- //
    // Dual simplex (warm restart after bound changes)
    // ----------------------------------------------------------------- //

    /// Re-optimize from the current (dual-feasible) basis after bound
    /// changes. Falls back to a cold primal solve if the basis turns out not
    /// to be dual feasible.
    pub(crate) fn resolve_dual(&mut self, params: &SolverParams) -> Result<LpOutcome, SolveError> {
        let m = self.nrows;
        if m == 0 {
            return Ok(self.solve_unconstrained(params));
        }
        self.set_nonbasic_values();
        self.recompute_basics();

        // Quick dual feasibility audit; numerics or fixed-variable edge
        // cases send us down the safe path.
        self.compute_duals_into();
        for j in 0..self.cols.len() {
            if self.stat[j] == VStat::Basic || self.lb[j] == self.ub[j] {
                continue;
            }
            if j >= self.artificial_start {
                continue;
            }
            let d = self.reduced_cost(j);
            let bad = match self.stat[j] {
                VStat::AtLower => d < -1e-6,
                VStat::AtUpper => d > 1e-6,
                VStat::FreeAtZero => d.abs() > 1e-6,
                VStat::Basic => false,
            };
            if bad {
                return self.solve_primal(params);
            }
        }

        let iter_limit = 50_000 + 200 * (m + self.cols.len()) as u64;
        let mut iters: u64 = 0;
        let mut degenerate_run: u32 = 0;
        loop {
            iters += 1;
            if iters > iter_limit {
                return Err(SolveError::Numerical(format!(
                    "dual simplex iteration limit ({iter_limit}) exceeded"
                )));
            }
            // Leaving: most violated basic.
            let mut leave_row = usize::MAX;
            let mut worst = params.feas_tol;
            let mut below_lower = false;
            for r in 0..m {
                let k = self.basic_in_row[r];
                let v_lo = self.lb[k] - self.x[k];
                let v_hi = self.x[k] - self.ub[k];
                if v_lo > worst {
                    worst = v_lo;
                    leave_row = r;
                    below_lower = true;
                }
                if v_hi > worst {
                    worst = v_hi;
                    leave_row = r;
                    below_lower = false;
                }
            }
            if leave_row == usize::MAX {
                return Ok(LpOutcome::Optimal);
            }
            let r = leave_row;
            self.compute_duals_into();
            let bland = degenerate_run > BLAND_AFTER;

            // Pivot row alpha_r for nonbasic columns.
            let brow = &self.binv[r * m..(r + 1) * m];
            let mut best_j = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            let mut best_mag = 0.0f64;
            for j in 0..self.cols.len() {
                if self.stat[j] == VStat::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                if j >= self.artificial_start {
                    continue;
                }
                let mut arj = 0.0;
                for &(i, v) in &self.cols[j] {
                    arj += brow[i as usize] * v;
                }
                if arj.abs() <= PIVOT_TOL {
                    continue;
                }
                // Eligibility by direction the entering variable may move.
                let ok = match (self.stat[j], below_lower) {
                    (VStat::AtLower, true) => arj < 0.0,
                    (VStat::AtLower, false) => arj > 0.0,
                    (VStat::AtUpper, true) => arj > 0.0,
                    (VStat::AtUpper, false) => arj < 0.0,
                    (VStat::FreeAtZero, _) => true,
                    (VStat::Basic, _) => false,
                };
                if !ok {
                    continue;
                }
                let d = self.reduced_cost(j);
                let ratio = (d / arj).abs();
                let take = if bland {
                    ratio < best_ratio - 1e-12 || (best_j != usize::MAX && ratio < best_ratio + 1e-12 && j < best_j)
                } else {
                    ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12 && arj.abs() > best_mag)
                };
                if best_j == usize::MAX || take {
                    best_j = j;
                    best_ratio = ratio;
                    best_mag = arj.abs();
                }
            }

            if best_j == usize::MAX {
                // Dual unbounded: primal infeasible. The violated row's binv
                // row is the certificate combination.
                let farkas: Vec<usize> = (0..m).filter(|&i| brow[i].abs() > 1e-9).collect();
                return Ok(LpOutcome::Infeasible { farkas_rows: farkas });
            }

            let q = best_j;
            let k_leave = self.basic_in_row[r];
            let target = if below_lower { self.lb[k_leave] } else { self.ub[k_leave] };
            self.ftran(q);
            let arq = self.work_alpha[r];
            // Step for the entering variable.
            let step = (self.x[k_leave] - target) / arq;
            degenerate_run = if step.abs() <= 1e-10 { degenerate_run + 1 } else { 0 };
            for i in 0..m {
                let a = self.work_alpha[i];
                if a != 0.0 {
                    let k = self.basic_in_row[i];
                    self.x[k] -= step * a;
                }
            }
            let x_new = self.x[q] + step;
            let leave_to = if below_lower { VStat::AtLower } else { VStat::AtUpper };
            self.x[k_leave] = target;
            self.update_basis(r, q, leave_to);
            self.x[q] = x_new;
            self.maybe_refactor()?;
        }
    }

    /// Worst bound violation over all columns (defensive audit).
    pub(crate) fn primal_infeasibility(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.cols.len() {
            worst = worst.max(self.lb[j] - self.x[j]).max(self.x[j] - self.ub[j]);
        }
        worst
    }
}

/// Solve the LP relaxation of `problem` (integrality and SOS-1 ignored) with
/// the two-phase bounded-variable simplex.
pub fn solve_lp(problem: &MilpProblem, params: &SolverParams) -> Result<LpSolution, SolveError> {
    problem.validate()?;
    let mut core = LpCore::from_problem(problem);
    let outcome = core.solve_primal(params)?;
    Ok(finish(problem, &mut core, outcome))
}


pub(crate) fn finish(problem: &MilpProblem, core: &mut LpCore, outcome: LpOutcome) -> LpSolution {
    match outcome {
        LpOutcome::Optimal => LpSolution {
            status: LpStatus::Optimal,
            objective: core.objective_value() + constant_term(problem),
            primal: core.primal().to_vec(),
            duals: core.row_duals(),
            farkas_rows: Vec::new(),
            ray: Vec::new(),
        },
        LpOutcome::Infeasible { farkas_rows } => LpSolution {
            status: LpStatus::Infeasible,
            objective: f64::INFINITY,
            primal: Vec::new(),
            duals: Vec::new(),
            farkas_rows,
            ray: Vec::new(),
        },
        LpOutcome::Unbounded { ray } => LpSolution {
            status: LpStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            primal: core.primal().to_vec(),
            duals: Vec::new(),
            farkas_rows: Vec::new(),
            ray,
        },
    }
}

fn constant_term(_problem: &MilpProblem) -> f64 {
    0.0
}

#[cfg(test)]
mod tests {
    use super::super::{RowSense, VarSpec};
    use super::*;

    fn params() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn lower_bound_only() {
        // min x s.t. x >= 3
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::continuous(3.0, f64::INFINITY));
        p.objective = vec![(x, 1.0)];
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-9);
        assert!((sol.primal[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_bounds_vs_row() {
        // min 0 s.t. x <= -1, x >= 0
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::nonneg());
        p.add_row(RowSense::Le, -1.0, vec![(x, 1.0)]);
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        assert!(!sol.farkas_rows.is_empty());
    }

    #[test]
    fn two_var_with_equality_and_free() {
        // min 2a + 10b + f  s.t.  a + b = 4, f - a <= -1, -1 <= a <= 3, b >= 0, f free
        // optimum: a = 3, b = 1, f as small as possible -> unbounded? f has cost +1
        // and only upper-bounded by f <= a - 1, lower unbounded -> unbounded.
        let mut p = MilpProblem::new("t");
        let a = p.add_var(VarSpec::continuous(-1.0, 3.0));
        let b = p.add_var(VarSpec::nonneg());
        let f = p.add_var(VarSpec::free());
        p.add_row(RowSense::Eq, 4.0, vec![(a, 1.0), (b, 1.0)]);
        p.add_row(RowSense::Le, -1.0, vec![(f, 1.0), (a, -1.0)]);
        p.objective = vec![(a, 2.0), (b, 10.0), (f, 1.0)];
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
        // ray decreases f
        assert!(sol.ray[2] < 0.0);

        // Bound f below and it becomes solvable.
        let mut p2 = p.clone();
        p2.vars[f].lb = -5.0;
        let sol2 = solve_lp(&p2, &params()).unwrap();
        assert_eq!(sol2.status, LpStatus::Optimal);
        // a = 3, b = 1, f = -5 -> 6 + 10 - 5 = 11
        assert!((sol2.objective - 11.0).abs() < 1e-8, "got {}", sol2.objective);
    }

    #[test]
    fn dual_signs_and_complementarity() {
        // min -x - 2y s.t. x + y <= 4, x <= 3, y <= 2 (rows), x,y >= 0
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::nonneg());
        let y = p.add_var(VarSpec::nonneg());
        p.add_row(RowSense::Le, 4.0, vec![(x, 1.0), (y, 1.0)]);
        p.add_row(RowSense::Le, 3.0, vec![(x, 1.0)]);
        p.add_row(RowSense::Le, 2.0, vec![(y, 1.0)]);
        p.objective = vec![(x, -1.0), (y, -2.0)];
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - (-6.0)).abs() < 1e-8);
        assert!((sol.primal[0] - 2.0).abs() < 1e-8);
        assert!((sol.primal[1] - 2.0).abs() < 1e-8);
        // Binding rows: 0 and 2. Duals nonnegative, row 1 slack -> dual 0.
        assert!(sol.duals[0] > 0.0 - 1e-9);
        assert!(sol.duals[1].abs() < 1e-9);
        assert!(sol.duals[2] >= -1e-9);
        // Stationarity: c + A' mu vanishes on x and y (no active bounds).
        let gx = -1.0 + sol.duals[0] + sol.duals[1];
        let gy = -2.0 + sol.duals[0] + sol.duals[2];
        assert!(gx.abs() < 1e-7, "gx={gx}");
        assert!(gy.abs() < 1e-7, "gy={gy}");
    }

    #[test]
    fn no_rows_bound_only() {
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::continuous(-2.0, 5.0));
        let y = p.add_var(VarSpec::continuous(-4.0, 1.0));
        p.objective = vec![(x, 1.0), (y, -1.0)];
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn equality_rows_with_negative_rhs() {
        // min x + y s.t. x - y = -7, x + y = 1 -> x = -3, y = 4 -> 1
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::free());
        let y = p.add_var(VarSpec::free());
        p.add_row(RowSense::Eq, -7.0, vec![(x, 1.0), (y, -1.0)]);
        p.add_row(RowSense::Eq, 1.0, vec![(x, 1.0), (y, 1.0)]);
        p.objective = vec![(x, 1.0), (y, 1.0)];
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.primal[0] + 3.0).abs() < 1e-8);
        assert!((sol.primal[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn fixed_variables_respected() {
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::continuous(2.5, 2.5));
        let y = p.add_var(VarSpec::nonneg());
        p.add_row(RowSense::Le, 10.0, vec![(x, 1.0), (y, 1.0)]);
        p.objective = vec![(y, -1.0)];
        let sol = solve_lp(&p, &params()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.primal[0] - 2.5).abs() < 1e-9);
        assert!((sol.primal[1] - 7.5).abs() < 1e-8);
    }
}
