//! Online model invalidation.
//!
//! Given the applied controlled input and the observed noisy outputs over a
//! window, each candidate model is checked for consistency: does any
//! admissible tuple (x0, d, w, v) reproduce the observations exactly while
//! every polytopic constraint holds along the induced trajectory?
//! Infeasibility of that LP rules the model out, and constraint-set nesting
//! makes the ruling permanent as the window grows. Measurement noise is the
//! error absorber: the predicted output must match the observation with v
//! inside its polytope, so a rank-deficient Dv leaves output directions
//! that must match exactly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AffineModel, Scenario};
use crate::solver::{
    solve_lp, LpStatus, MilpProblem, RowSense, SolveError, SolverParams, VarSpec,
};
use crate::stack::stack_single;

/// Applied input and observed outputs over a window of `T_w` steps
/// (outputs at `T_w + 1` instants).
#[derive(Clone, Debug)]
pub struct ObservationWindow {
    pub u_applied: Vec<DVector<f64>>,
    pub z_observed: Vec<DVector<f64>>,
}

impl ObservationWindow {
    pub fn window_len(&self) -> usize {
        self.u_applied.len()
    }

    pub fn check_shapes(&self, m_u: usize, p: usize) -> Result<(), InvalidationError> {
        let t_w = self.u_applied.len();
        if t_w == 0 {
            return Err(InvalidationError::WindowShape("window must cover at least one step".into()));
        }
        if self.z_observed.len() != t_w + 1 {
            return Err(InvalidationError::WindowShape(format!(
                "expected {} output samples for {} input steps, found {}",
                t_w + 1,
                t_w,
                self.z_observed.len()
            )));
        }
        if self.u_applied.iter().any(|u| u.len() != m_u) {
            return Err(InvalidationError::WindowShape(format!("inputs must have {m_u} entries")));
        }
        if self.z_observed.iter().any(|z| z.len() != p) {
            return Err(InvalidationError::WindowShape(format!("outputs must have {p} entries")));
        }
        Ok(())
    }
}

/// Per-model outcome. The margin says how far all inequality constraints
/// can be uniformly tightened while staying consistent (zero means the
/// witness set has empty interior).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ModelStatus {
    Consistent { margin: f64 },
    Invalidated,
}

impl ModelStatus {
    pub fn is_consistent(&self) -> bool {
        matches!(self, ModelStatus::Consistent { .. })
    }
}

/// Verdict across all models. `identified` is set iff exactly one model
/// remains consistent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InvalidationVerdict {
    pub statuses: Vec<ModelStatus>,
    pub identified: Option<usize>,
    /// Dv has row rank below p for some model: exact output matching then
    /// constrains noise-free output directions directly, which is stricter
    /// than an error-band check would be.
    pub dv_rank_deficient: bool,
}

#[derive(Debug, Error)]
pub enum InvalidationError {
    #[error("observation window is malformed: {0}")]
    WindowShape(String),
    #[error("every model is inconsistent with the observations")]
    AllInvalidated { statuses: Vec<ModelStatus> },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

const MARGIN_CAP: f64 = 1e9;

fn dv_row_rank(dv: &nalgebra::DMatrix<f64>) -> usize {
    if dv.ncols() == 0 || dv.nrows() == 0 {
        return 0;
    }
    let svd = dv.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-10 * max_sv.max(1.0);
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Consistency LP for one model over the window prefix.
///
/// Feasibility variables are (x0, d, w, v, margin); the output equalities
/// absorb measurement error through v and the margin uniformly tightens all
/// inequality rows, so the optimal margin is the reported slack.
pub fn invalidate_model(
    model: &AffineModel,
    scenario: &Scenario,
    window: &ObservationWindow,
    params: &SolverParams,
) -> Result<ModelStatus, InvalidationError> {
    window.check_shapes(model.m_u, model.p())?;
    let t_w = window.window_len();
    let stacked = stack_single(model, t_w);
    let n = model.n();
    let (m_d, m_w, m_v, p) = (model.m_d, model.m_w(), model.m_v(), model.p());

    let mut lp = MilpProblem::new("invalidation");
    let x0 = lp.add_vars(n, VarSpec::free());
    let d = lp.add_vars(t_w * m_d, VarSpec::free());
    let w = lp.add_vars(t_w * m_w, VarSpec::free());
    let v = lp.add_vars((t_w + 1) * m_v, VarSpec::free());
    let margin = lp.add_var(VarSpec::continuous(0.0, MARGIN_CAP));
    lp.objective = vec![(margin, -1.0)];

    // Polytope membership with uniform tightening.
    let mut add_set = |lp: &mut MilpProblem, set: &crate::model::Polytope, vars: &std::ops::Range<usize>, steps: usize| {
        let dim = set.dim();
        for k in 0..steps {
            for r in 0..set.num_rows() {
                let mut coeffs: Vec<(usize, f64)> = (0..dim)
                    .filter(|&q| set.h_mat[(r, q)] != 0.0)
                    .map(|q| (vars.start + k * dim + q, set.h_mat[(r, q)]))
                    .collect();
                coeffs.push((margin, 1.0));
                lp.add_row(RowSense::Le, set.h_vec[r], coeffs);
            }
        }
    };
    add_set(&mut lp, &scenario.x0_set, &x0, 1);
    add_set(&mut lp, &model.d_set, &d, t_w);
    add_set(&mut lp, &scenario.w_set, &w, t_w);
    add_set(&mut lp, &scenario.v_set, &v, t_w + 1);

    // Responsibility polytopes along the induced trajectory, k = 1..T_w.
    let u_flat = DVector::from_iterator(
        t_w * model.m_u,
        window.u_applied.iter().flat_map(|u| u.iter().copied()),
    );
    let mut add_resp = |lp: &mut MilpProblem,
                        set: &crate::model::Polytope,
                        m_map: &nalgebra::DMatrix<f64>,
                        g_u: &nalgebra::DMatrix<f64>,
                        g_d: &nalgebra::DMatrix<f64>,
                        g_w: &nalgebra::DMatrix<f64>,
                        f_t: &DVector<f64>,
                        dim: usize| {
        if set.num_rows() == 0 {
            return;
        }
        let fixed_u = g_u * &u_flat;
        for k in 0..t_w {
            for r in 0..set.num_rows() {
                let mut coeffs: Vec<(usize, f64)> = Vec::new();
                let mut rhs = set.h_vec[r];
                for e in 0..dim {
                    let pr = set.h_mat[(r, e)];
                    if pr == 0.0 {
                        continue;
                    }
                    let row = k * dim + e;
                    rhs -= pr * (fixed_u[row] + f_t[row]);
                    for q in 0..n {
                        let c = m_map[(row, q)];
                        if c != 0.0 {
                            coeffs.push((x0.start + q, pr * c));
                        }
                    }
                    for q in 0..t_w * m_d {
                        let c = g_d[(row, q)];
                        if c != 0.0 {
                            coeffs.push((d.start + q, pr * c));
                        }
                    }
                    for q in 0..t_w * m_w {
                        let c = g_w[(row, q)];
                        if c != 0.0 {
                            coeffs.push((w.start + q, pr * c));
                        }
                    }
                }
                coeffs.push((margin, 1.0));
                lp.add_row(RowSense::Le, rhs, coeffs);
            }
        }
    };
    add_resp(
        &mut lp, &model.x_set, &stacked.m_x, &stacked.gamma_xu, &stacked.gamma_xd,
        &stacked.gamma_xw, &stacked.f_tilde_x, model.n_x,
    );
    add_resp(
        &mut lp, &model.y_set, &stacked.m_y, &stacked.gamma_yu, &stacked.gamma_yd,
        &stacked.gamma_yw, &stacked.f_tilde_y, model.n_y,
    );

    // Exact output matching: E(state stack) + F_u u + F_d d + F_v v + g = z.
    let z_flat = DVector::from_iterator(
        (t_w + 1) * p,
        window.z_observed.iter().flat_map(|z| z.iter().copied()),
    );
    let a_out = stacked.a_out();
    let gu_out = stacked.gamma_out(&stacked.gamma_u);
    let gd_out = stacked.gamma_out(&stacked.gamma_d);
    let gw_out = stacked.gamma_out(&stacked.gamma_w);
    let f_out = stacked.f_out();
    let e_a = &stacked.e * &a_out;
    let e_gd = &stacked.e * &gd_out + &stacked.f_d;
    let e_gw = &stacked.e * &gw_out;
    let known = &z_flat
        - (&stacked.e * (&gu_out * &u_flat)
            + &stacked.f_u * &u_flat
            + &stacked.e * &f_out
            + &stacked.g_tilde);
    for row in 0..(t_w + 1) * p {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for q in 0..n {
            let c = e_a[(row, q)];
            if c != 0.0 {
                coeffs.push((x0.start + q, c));
            }
        }
        for q in 0..t_w * m_d {
            let c = e_gd[(row, q)];
            if c != 0.0 {
                coeffs.push((d.start + q, c));
            }
        }
        for q in 0..t_w * m_w {
            let c = e_gw[(row, q)];
            if c != 0.0 {
                coeffs.push((w.start + q, c));
            }
        }
        for q in 0..(t_w + 1) * m_v {
            let c = stacked.f_v[(row, q)];
            if c != 0.0 {
                coeffs.push((v.start + q, c));
            }
        }
        lp.add_row(RowSense::Eq, known[row], coeffs);
    }

    let sol = solve_lp(&lp, params)?;
    match sol.status {
        LpStatus::Optimal => Ok(ModelStatus::Consistent { margin: -sol.objective }),
        LpStatus::Infeasible => Ok(ModelStatus::Invalidated),
        LpStatus::Unbounded => Err(InvalidationError::Solve(SolveError::Numerical(
            "invalidation LP unbounded despite margin cap".into(),
        ))),
    }
}

/// Run [`invalidate_model`] for every model; exactly one survivor
/// identifies the mode, zero survivors is the `AllInvalidated` error.
pub fn identify(
    scenario: &Scenario,
    window: &ObservationWindow,
    params: &SolverParams,
) -> Result<InvalidationVerdict, InvalidationError> {
    let mut statuses = Vec::with_capacity(scenario.models.len());
    for model in &scenario.models {
        statuses.push(invalidate_model(model, scenario, window, params)?);
    }
    let consistent: Vec<usize> = statuses
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_consistent())
        .map(|(i, _)| i)
        .collect();
    if consistent.is_empty() {
        return Err(InvalidationError::AllInvalidated { statuses });
    }
    let dv_rank_deficient = scenario.models.iter().any(|m| dv_row_rank(&m.dv) < m.p());
    Ok(InvalidationVerdict {
        identified: if consistent.len() == 1 { Some(consistent[0]) } else { None },
        statuses,
        dv_rank_deficient,
    })
}

/// One line of the verdict stream: time step, per-model statuses with
/// margins, and the identified model if any.
pub fn verdict_stream_line(t: usize, verdict: &InvalidationVerdict) -> String {
    let statuses: Vec<serde_json::Value> = verdict
        .statuses
        .iter()
        .map(|s| match s {
            ModelStatus::Consistent { margin } => serde_json::json!({
                "status": "consistent",
                "margin": margin,
            }),
            ModelStatus::Invalidated => serde_json::json!({"status": "invalidated"}),
        })
        .collect();
    serde_json::json!({
        "t": t,
        "models": statuses,
        "identified": verdict.identified,
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::build_numerical_example;
    use crate::stack::simulate;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> SolverParams {
        SolverParams::default()
    }

    fn sample_window(true_model: usize, seed: u64) -> (crate::model::Scenario, ObservationWindow) {
        let scenario = build_numerical_example();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = &scenario.models[true_model];
        let t = scenario.horizon;
        let x0 = DVector::from_column_slice(&[rng.gen_range(0.0..1.0), rng.gen_range(1.0..2.0)]);
        let u: Vec<DVector<f64>> =
            (0..t).map(|_| DVector::from_element(1, rng.gen_range(-2.0..2.0))).collect();
        let d: Vec<DVector<f64>> =
            (0..t).map(|_| DVector::from_element(1, rng.gen_range(-0.1..0.1))).collect();
        let w: Vec<DVector<f64>> =
            (0..t).map(|_| DVector::from_element(1, rng.gen_range(-0.01..0.01))).collect();
        let v: Vec<DVector<f64>> =
            (0..=t).map(|_| DVector::from_element(1, rng.gen_range(-0.01..0.01))).collect();
        let (_, outputs) = simulate(model, &x0, &u, &d, &w, &v).unwrap();
        (scenario, ObservationWindow { u_applied: u, z_observed: outputs })
    }

    #[test]
    fn self_generated_window_is_consistent() {
        for seed in 0..10 {
            let (scenario, window) = sample_window(0, seed);
            let status =
                invalidate_model(&scenario.models[0], &scenario, &window, &params()).unwrap();
            assert!(status.is_consistent(), "seed {seed}");
        }
    }

    #[test]
    fn absurd_observations_invalidate_everything() {
        let (scenario, mut window) = sample_window(0, 3);
        for z in &mut window.z_observed {
            z.fill(1e6);
        }
        match identify(&scenario, &window, &params()) {
            Err(InvalidationError::AllInvalidated { statuses }) => {
                assert!(statuses.iter().all(|s| !s.is_consistent()));
            }
            other => panic!("expected AllInvalidated, got {other:?}"),
        }
    }

    #[test]
    fn single_model_scenario_identifies_itself() {
        let (mut scenario, window) = sample_window(0, 5);
        scenario.models.truncate(1);
        let verdict = identify(&scenario, &window, &params()).unwrap();
        assert_eq!(verdict.identified, Some(0));
    }

    #[test]
    fn rank_deficient_dv_is_flagged_not_fatal() {
        // The benchmark's Dv = [1; 1] has row rank 1 < p = 2.
        let (scenario, window) = sample_window(1, 8);
        let verdict = identify(&scenario, &window, &params()).unwrap();
        assert!(verdict.dv_rank_deficient);
    }

    #[test]
    fn malformed_windows_are_rejected() {
        let (scenario, mut window) = sample_window(0, 2);
        window.z_observed.pop();
        let err = invalidate_model(&scenario.models[0], &scenario, &window, &params());
        assert!(matches!(err, Err(InvalidationError::WindowShape(_))));
    }

    #[test]
    fn verdict_stream_line_is_json() {
        let verdict = InvalidationVerdict {
            statuses: vec![ModelStatus::Consistent { margin: 0.25 }, ModelStatus::Invalidated],
            identified: Some(0),
            dv_rank_deficient: false,
        };
        let line = verdict_stream_line(3, &verdict);
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["t"], 3);
        assert_eq!(v["identified"], 0);
        assert_eq!(v["models"][1]["status"], "invalidated");
    }
}
