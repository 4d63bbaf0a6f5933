//! Built-in benchmark scenarios and the seeded simulation harness.
//!
//! Three builders ship with the toolkit: a five-model second-order
//! benchmark used throughout the tests, and two driving case studies
//! (intersection crossing and lane changing) where the model hypotheses are
//! driver intentions — inattentive, cautious and malicious — with the PD
//! feedback of the intention absorbed into the A matrix and the residual
//! behavioral variability entering as the uncontrolled input d.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::invalidation::{identify, InvalidationError, InvalidationVerdict, ModelStatus};
use crate::model::{
    polytope_bounding_box, sample_polytope, AffineModel, ObjectiveSpec, Polytope, Scenario,
};
use crate::solver::{SolveError, SolverParams};
use crate::stack::simulate;

// --------------------------------------------------------------------- //
// Five-model numerical benchmark
// --------------------------------------------------------------------- //

/// Five second-order models differing in one matrix each: the baseline, two
/// A-matrix edits, a B edit that disconnects the controlled input, and a C
/// edit that blinds the second output. T = 2, ε = 0.01.
pub fn build_numerical_example() -> Scenario {
    let base_a = DMatrix::from_row_slice(2, 2, &[0.6, 0.2, -0.4, -0.2]);
    let base = AffineModel {
        a: base_a.clone(),
        b: DMatrix::identity(2, 2),
        bw: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        c: DMatrix::identity(2, 2),
        d: DMatrix::zeros(2, 2),
        dv: DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        f: DVector::zeros(2),
        g: DVector::zeros(2),
        n_x: 1,
        n_y: 1,
        m_u: 1,
        m_d: 1,
        x_set: Polytope::whole_space(1),
        y_set: Polytope::whole_space(1),
        d_set: Polytope::from_box(&[-0.1], &[0.1]),
    };
    let mut m2 = base.clone();
    m2.a = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.4, -0.2]);
    let mut m3 = base.clone();
    m3.a = DMatrix::from_row_slice(2, 2, &[0.6, -0.5, -0.4, -0.2]);
    let mut m4 = base.clone();
    m4.b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
    let mut m5 = base.clone();
    m5.c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);

    Scenario {
        models: vec![base, m2, m3, m4, m5],
        horizon: 2,
        epsilon: 0.01,
        objective: ObjectiveSpec::OneNorm,
        x0_set: Polytope::from_box(&[0.0, 1.0], &[1.0, 2.0]),
        u_set: Polytope::from_box(&[-2.0], &[2.0]),
        w_set: Polytope::from_box(&[-0.01], &[0.01]),
        v_set: Polytope::from_box(&[-0.01], &[0.01]),
    }
}

// --------------------------------------------------------------------- //
// Intersection crossing
// --------------------------------------------------------------------- //

/// Parameters of the intersection scenario; defaults follow the case
/// study (sampling time 0.3 s, braking/acceleration limits, PD gains of
/// the cautious and malicious intentions, 5%/10% disturbance fractions).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntersectionParams {
    pub dt: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub k_p_cautious: f64,
    pub k_d_cautious: f64,
    pub k_p_malicious: f64,
    pub k_d_malicious: f64,
    pub inattentive_fraction: f64,
    pub cautious_fraction: f64,
    pub malicious_fraction: f64,
    pub process_noise_bound: f64,
    pub measurement_noise_bound: f64,
    /// Initial boxes: ego position, ego velocity, other position, other
    /// velocity.
    pub x0_lower: [f64; 4],
    pub x0_upper: [f64; 4],
    pub ego_velocity_bounds: (f64, f64),
    pub inattentive_velocity_bounds: (f64, f64),
    /// Extra malicious-velocity responsibility constraint; switching it on
    /// couples the uncontrolled partition to the input and flips the
    /// conservative design's suboptimality warning.
    pub malicious_velocity_bounds: Option<(f64, f64)>,
    pub epsilon: f64,
    pub horizon: usize,
}

impl Default for IntersectionParams {
    fn default() -> Self {
        IntersectionParams {
            dt: 0.3,
            u_min: -7.85,
            u_max: 3.97,
            k_p_cautious: 1.5,
            k_d_cautious: 4.75,
            k_p_malicious: 1.0,
            k_d_malicious: 3.5,
            inattentive_fraction: 0.10,
            cautious_fraction: 0.05,
            malicious_fraction: 0.05,
            process_noise_bound: 0.01,
            measurement_noise_bound: 0.01,
            x0_lower: [15.0, 6.0, 15.0, 6.0],
            x0_upper: [18.0, 9.0, 18.0, 9.0],
            ego_velocity_bounds: (0.0, 9.0),
            inattentive_velocity_bounds: (6.0, 9.0),
            malicious_velocity_bounds: None,
            epsilon: 0.25,
            horizon: 8,
        }
    }
}

/// Two vehicles approaching an intersection; states (x, v_x, y, v_y) with
/// the ego responsible for (x, v_x). The observation is the other car's
/// velocity. Intention order: inattentive, cautious, malicious.
pub fn build_intersection(params: &IntersectionParams) -> Scenario {
    let dt = params.dt;
    let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, dt, 0.0, 0.0, 0.0, 0.0, dt]);
    let bw = b.clone();
    let c = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 1.0]);
    let ego_x_set = Polytope::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]),
        DVector::from_column_slice(&[params.ego_velocity_bounds.1, -params.ego_velocity_bounds.0]),
    );
    let d_box = |fraction: f64| {
        Polytope::from_box(&[fraction * params.u_min], &[fraction * params.u_max])
    };
    let template = |a: DMatrix<f64>, y_set: Polytope, fraction: f64| AffineModel {
        a,
        b: b.clone(),
        bw: bw.clone(),
        c: c.clone(),
        d: DMatrix::zeros(1, 2),
        dv: DMatrix::from_element(1, 1, 1.0),
        f: DVector::zeros(4),
        g: DVector::zeros(1),
        n_x: 2,
        n_y: 2,
        m_u: 1,
        m_d: 1,
        x_set: ego_x_set.clone(),
        y_set,
        d_set: d_box(fraction),
    };

    let a_inattentive = DMatrix::from_row_slice(
        4,
        4,
        &[1.0, dt, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, dt, 0.0, 0.0, 0.0, 1.0],
    );
    let inattentive_y = Polytope::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]),
        DVector::from_column_slice(&[
            params.inattentive_velocity_bounds.1,
            -params.inattentive_velocity_bounds.0,
        ]),
    );
    let a_cautious = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, dt, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, dt,
            0.0, 0.0, -params.k_p_cautious * dt, 1.0 - params.k_d_cautious * dt,
        ],
    );
    let a_malicious = DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0, dt, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, dt,
            params.k_p_malicious * dt, params.k_d_malicious * dt,
            -params.k_p_malicious * dt, 1.0 - params.k_d_malicious * dt,
        ],
    );
    let malicious_y = match params.malicious_velocity_bounds {
        Some((lo, hi)) => Polytope::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]),
            DVector::from_column_slice(&[hi, -lo]),
        ),
        None => Polytope::whole_space(2),
    };

    Scenario {
        models: vec![
            template(a_inattentive, inattentive_y, params.inattentive_fraction),
            template(a_cautious, Polytope::whole_space(2), params.cautious_fraction),
            template(a_malicious, malicious_y, params.malicious_fraction),
        ],
        horizon: params.horizon,
        epsilon: params.epsilon,
        objective: ObjectiveSpec::InfNorm,
        x0_set: Polytope::from_box(&params.x0_lower, &params.x0_upper),
        u_set: Polytope::from_box(&[params.u_min], &[params.u_max]),
        w_set: Polytope::from_box(
            &[-params.process_noise_bound; 2],
            &[params.process_noise_bound; 2],
        ),
        v_set: Polytope::from_box(
            &[-params.measurement_noise_bound],
            &[params.measurement_noise_bound],
        ),
    }
}

// --------------------------------------------------------------------- //
// Lane changing
// --------------------------------------------------------------------- //

/// Parameters of the lane-change scenario; the ego controls its
/// acceleration and its lateral velocity, the other car stays in its lane
/// and reacts according to its intention.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LaneChangeParams {
    pub dt: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub lateral_velocity_bounds: (f64, f64),
    pub k_d_cautious: f64,
    pub l_p_cautious: f64,
    pub l_d_cautious: f64,
    pub k_d_malicious: f64,
    pub l_p_malicious: f64,
    pub l_d_malicious: f64,
    /// Lateral reference ȳ the other driver reacts to.
    pub y_ref: f64,
    pub inattentive_fraction: f64,
    pub cautious_fraction: f64,
    pub malicious_fraction: f64,
    pub process_noise_bound: f64,
    pub measurement_noise_bound: f64,
    /// Initial boxes over (x_e, v_xe, y_e, x_o, v_xo).
    pub x0_lower: [f64; 5],
    pub x0_upper: [f64; 5],
    pub ego_velocity_bounds: (f64, f64),
    pub ego_lateral_bounds: (f64, f64),
    pub epsilon: f64,
    pub horizon: usize,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        LaneChangeParams {
            dt: 0.3,
            u_min: -7.85,
            u_max: 3.97,
            lateral_velocity_bounds: (-0.35, 0.0),
            k_d_cautious: 0.9,
            l_p_cautious: 2.5,
            l_d_cautious: 8.9,
            k_d_malicious: 1.1,
            l_p_malicious: 2.0,
            l_d_malicious: 8.7,
            y_ref: 2.0,
            inattentive_fraction: 0.10,
            cautious_fraction: 0.05,
            malicious_fraction: 0.05,
            process_noise_bound: 0.01,
            measurement_noise_bound: 0.01,
            x0_lower: [0.0, 30.0, 1.1, 7.0, 30.0],
            x0_upper: [0.0, 32.0, 1.8, 12.0, 32.0],
            ego_velocity_bounds: (27.0, 35.0),
            ego_lateral_bounds: (0.5, 2.0),
            epsilon: 0.25,
            horizon: 8,
        }
    }
}

/// Highway lane change; states (x_e, v_xe, y_e, x_o, v_xo) with the ego
/// responsible for the first three. Controlled inputs are the ego
/// acceleration and lateral velocity; the observation is the other car's
/// longitudinal velocity. Intention order: inattentive, cautious,
/// malicious.
pub fn build_lane_change(params: &LaneChangeParams) -> Scenario {
    let dt = params.dt;
    // Input columns: (u, v_ye, d).
    let b_inattentive = DMatrix::from_row_slice(
        5,
        3,
        &[
            0.0, 0.0, 0.0,
            dt, 0.0, 0.0,
            0.0, dt, 0.0,
            0.0, 0.0, 0.0,
            0.0, 0.0, dt,
        ],
    );
    let bw = DMatrix::from_row_slice(
        5,
        3,
        &[
            0.0, 0.0, 0.0,
            dt, 0.0, 0.0,
            0.0, dt, 0.0,
            0.0, 0.0, 0.0,
            0.0, 0.0, dt,
        ],
    );
    let c = DMatrix::from_row_slice(1, 5, &[0.0, 0.0, 0.0, 0.0, 1.0]);
    let ego_x_set = Polytope::new(
        DMatrix::from_row_slice(
            4,
            3,
            &[0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0],
        ),
        DVector::from_column_slice(&[
            params.ego_velocity_bounds.1,
            -params.ego_velocity_bounds.0,
            params.ego_lateral_bounds.1,
            -params.ego_lateral_bounds.0,
        ]),
    );
    let d_box = |fraction: f64| {
        Polytope::from_box(&[fraction * params.u_min], &[fraction * params.u_max])
    };
    let template = |a: DMatrix<f64>, b: DMatrix<f64>, f: DVector<f64>, fraction: f64| AffineModel {
        a,
        b,
        bw: bw.clone(),
        c: c.clone(),
        d: DMatrix::zeros(1, 3),
        dv: DMatrix::from_element(1, 1, 1.0),
        f,
        g: DVector::zeros(1),
        n_x: 3,
        n_y: 2,
        m_u: 2,
        m_d: 1,
        x_set: ego_x_set.clone(),
        y_set: Polytope::whole_space(2),
        d_set: d_box(fraction),
    };
    let base_rows = [
        [1.0, dt, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, dt],
    ];
    let a_with_last = |last: [f64; 5]| {
        let mut rows: Vec<f64> = base_rows.iter().flatten().copied().collect();
        rows.extend_from_slice(&last);
        DMatrix::from_row_slice(5, 5, &rows)
    };

    let a_inattentive = a_with_last([0.0, 0.0, 0.0, 0.0, 1.0]);
    let a_cautious = a_with_last([
        0.0,
        -params.k_d_cautious * dt,
        params.l_p_cautious * dt,
        0.0,
        1.0 + params.k_d_cautious * dt,
    ]);
    let a_malicious = a_with_last([
        0.0,
        params.k_d_malicious * dt,
        -params.l_p_malicious * dt,
        0.0,
        1.0 - params.k_d_malicious * dt,
    ]);
    let b_cautious = {
        let mut b = b_inattentive.clone();
        b[(4, 1)] = params.l_d_cautious * dt;
        b
    };
    let b_malicious = {
        let mut b = b_inattentive.clone();
        b[(4, 1)] = -params.l_d_malicious * dt;
        b
    };
    let f_cautious = DVector::from_column_slice(&[
        0.0,
        0.0,
        0.0,
        0.0,
        -params.l_p_cautious * params.y_ref * dt,
    ]);
    let f_malicious = DVector::from_column_slice(&[
        0.0,
        0.0,
        0.0,
        0.0,
        params.l_p_malicious * params.y_ref * dt,
    ]);

    Scenario {
        models: vec![
            template(a_inattentive, b_inattentive.clone(), DVector::zeros(5), params.inattentive_fraction),
            template(a_cautious, b_cautious, f_cautious, params.cautious_fraction),
            template(a_malicious, b_malicious, f_malicious, params.malicious_fraction),
        ],
        horizon: params.horizon,
        epsilon: params.epsilon,
        objective: ObjectiveSpec::InfNorm,
        x0_set: Polytope::from_box(&params.x0_lower, &params.x0_upper),
        u_set: Polytope::from_box(
            &[params.u_min, params.lateral_velocity_bounds.0],
            &[params.u_max, params.lateral_velocity_bounds.1],
        ),
        w_set: Polytope::from_box(
            &[-params.process_noise_bound; 3],
            &[params.process_noise_bound; 3],
        ),
        v_set: Polytope::from_box(
            &[-params.measurement_noise_bound],
            &[params.measurement_noise_bound],
        ),
    }
}

// --------------------------------------------------------------------- //
// Seeded simulation harness
// --------------------------------------------------------------------- //

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("sampling failed at step {step}: {constraint}")]
    SamplingFailed { step: usize, constraint: String },
    #[error("true model index {0} out of range")]
    BadModelIndex(usize),
    #[error("input sequence must have {want} steps of {dim} entries")]
    BadInput { want: usize, dim: usize },
    #[error(transparent)]
    Invalidation(#[from] InvalidationError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Simulate(#[from] crate::stack::SimulateError),
}

/// One invalidation sweep after step `t` (window `[0, t]`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub t: usize,
    pub statuses: Vec<ModelStatus>,
    pub identified: Option<usize>,
    pub all_invalidated: bool,
}

/// A complete seeded run: the sampled uncertainties, the observed
/// trajectory of the true model, nominal (zero-uncertainty) trajectories of
/// every hypothesis under the same input, and the invalidation timeline
/// over growing windows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    pub true_model: usize,
    pub u_applied: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub d: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub nominal_states: Vec<Vec<Vec<f64>>>,
    pub timeline: Vec<TimelineEntry>,
}

const SAMPLE_RETRIES: usize = 5000;

/// Sample admissible uncertainties with rejection against the true model's
/// responsibility sets, simulate, and feed growing windows to the
/// identification loop.
pub fn run_simulation(
    scenario: &Scenario,
    true_model: usize,
    u_seq: &[DVector<f64>],
    seed: u64,
) -> Result<SimulationRun, SimulationError> {
    if true_model >= scenario.models.len() {
        return Err(SimulationError::BadModelIndex(true_model));
    }
    let t = scenario.horizon;
    if u_seq.len() != t || u_seq.iter().any(|u| u.len() != scenario.m_u()) {
        return Err(SimulationError::BadInput { want: t, dim: scenario.m_u() });
    }
    let model = &scenario.models[true_model];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SolverParams::default();

    let (x0_lo, x0_hi) = polytope_bounding_box(&scenario.x0_set)?;
    let (d_lo, d_hi) = polytope_bounding_box(&model.d_set)?;
    let (w_lo, w_hi) = polytope_bounding_box(&scenario.w_set)?;
    let (v_lo, v_hi) = polytope_bounding_box(&scenario.v_set)?;

    // Initial state: uniform in X0, rejected into the true model's y(0)
    // responsibility set.
    let mut x0 = None;
    for _ in 0..SAMPLE_RETRIES {
        let Some(cand) = sample_polytope(&scenario.x0_set, &x0_lo, &x0_hi, &mut rng, SAMPLE_RETRIES)
        else {
            break;
        };
        let y0 = cand.rows(model.n_x, model.n_y).into_owned();
        if model.y_set.contains(&y0, 1e-9) {
            x0 = Some(cand);
            break;
        }
    }
    let x0 = x0.ok_or(SimulationError::SamplingFailed {
        step: 0,
        constraint: "x0 in X0 with y(0) in the responsibility set".into(),
    })?;

    // Step-by-step sampling with responsibility rejection on the true
    // model's trajectory.
    let b_u = model.b_u();
    let b_d = model.b_d();
    let mut x = x0.clone();
    let mut d_seq: Vec<DVector<f64>> = Vec::with_capacity(t);
    let mut w_seq: Vec<DVector<f64>> = Vec::with_capacity(t);
    for k in 0..t {
        let mut accepted = false;
        for _ in 0..SAMPLE_RETRIES {
            let Some(dk) = sample_polytope(&model.d_set, &d_lo, &d_hi, &mut rng, SAMPLE_RETRIES)
            else {
                break;
            };
            let Some(wk) = sample_polytope(&scenario.w_set, &w_lo, &w_hi, &mut rng, SAMPLE_RETRIES)
            else {
                break;
            };
            let x_next =
                &model.a * &x + &b_u * &u_seq[k] + &b_d * &dk + &model.bw * &wk + &model.f;
            let x_part = x_next.rows(0, model.n_x).into_owned();
            let y_part = x_next.rows(model.n_x, model.n_y).into_owned();
            if model.x_set.contains(&x_part, 1e-9) && model.y_set.contains(&y_part, 1e-9) {
                d_seq.push(dk);
                w_seq.push(wk);
                x = x_next;
                accepted = true;
                break;
            }
        }
        if !accepted {
            let name = if model.x_set.num_rows() > 0 {
                "responsibility sets at the next step"
            } else {
                "y responsibility set at the next step"
            };
            return Err(SimulationError::SamplingFailed { step: k, constraint: name.into() });
        }
    }
    let mut v_seq: Vec<DVector<f64>> = Vec::with_capacity(t + 1);
    for k in 0..=t {
        let vk = sample_polytope(&scenario.v_set, &v_lo, &v_hi, &mut rng, SAMPLE_RETRIES).ok_or(
            SimulationError::SamplingFailed { step: k, constraint: "v in V".into() },
        )?;
        v_seq.push(vk);
    }

    let (states, outputs) = simulate(model, &x0, u_seq, &d_seq, &w_seq, &v_seq)?;

    // Nominal zero-uncertainty trajectories per hypothesis (same input).
    let mut nominal_states = Vec::with_capacity(scenario.models.len());
    for hyp in &scenario.models {
        let d0 = vec![DVector::zeros(hyp.m_d); t];
        let w0 = vec![DVector::zeros(hyp.m_w()); t];
        let v0 = vec![DVector::zeros(hyp.m_v()); t + 1];
        let (s, _) = simulate(hyp, &x0, u_seq, &d0, &w0, &v0)?;
        nominal_states.push(s.iter().map(|x| x.as_slice().to_vec()).collect());
    }

    // Growing-window identification.
    let mut timeline = Vec::with_capacity(t);
    for upto in 1..=t {
        let window = crate::invalidation::ObservationWindow {
            u_applied: u_seq[..upto].to_vec(),
            z_observed: outputs[..=upto].to_vec(),
        };
        match identify(scenario, &window, &params) {
            Ok(verdict) => timeline.push(TimelineEntry {
                t: upto,
                statuses: verdict.statuses.clone(),
                identified: verdict.identified,
                all_invalidated: false,
            }),
            Err(InvalidationError::AllInvalidated { statuses }) => timeline.push(TimelineEntry {
                t: upto,
                statuses,
                identified: None,
                all_invalidated: true,
            }),
            Err(e) => return Err(e.into()),
        }
    }

    Ok(SimulationRun {
        seed,
        true_model,
        u_applied: u_seq.iter().map(|u| u.as_slice().to_vec()).collect(),
        x0: x0.as_slice().to_vec(),
        d: d_seq.iter().map(|d| d.as_slice().to_vec()).collect(),
        w: w_seq.iter().map(|w| w.as_slice().to_vec()).collect(),
        v: v_seq.iter().map(|v| v.as_slice().to_vec()).collect(),
        states: states.iter().map(|x| x.as_slice().to_vec()).collect(),
        outputs: outputs.iter().map(|z| z.as_slice().to_vec()).collect(),
        nominal_states,
        timeline,
    })
}

/// Verdict of a run for quick assertions: the step at which the true model
/// became the unique consistent one, if ever.
pub fn identified_at(run: &SimulationRun) -> Option<usize> {
    run.timeline
        .iter()
        .find(|e| e.identified == Some(run.true_model))
        .map(|e| e.t)
}

/// Trajectory CSV: one row per time step with inputs, observed outputs,
/// true states, per-hypothesis nominal states and invalidation statuses.
pub fn write_run_csv<W: std::io::Write>(
    run: &SimulationRun,
    scenario: &Scenario,
    out: &mut W,
) -> std::io::Result<()> {
    let fmt = |v: f64| format!("{v:.16e}");
    let mut header: Vec<String> = vec!["k".into()];
    header.extend((0..scenario.m_u()).map(|j| format!("u{j}")));
    header.extend((0..scenario.p()).map(|j| format!("z{j}")));
    header.extend((0..scenario.n()).map(|j| format!("x{j}")));
    for m in 0..scenario.models.len() {
        header.extend((0..scenario.n()).map(move |j| format!("model{m}_x{j}")));
    }
    header.extend((0..scenario.models.len()).map(|m| format!("model{m}_status")));
    header.push("identified".into());
    writeln!(out, "{}", header.join(","))?;
    let t = scenario.horizon;
    for k in 0..=t {
        let mut row: Vec<String> = vec![k.to_string()];
        if k < t {
            row.extend(run.u_applied[k].iter().map(|&v| fmt(v)));
        } else {
            row.extend(std::iter::repeat(String::new()).take(scenario.m_u()));
        }
        row.extend(run.outputs[k].iter().map(|&v| fmt(v)));
        row.extend(run.states[k].iter().map(|&v| fmt(v)));
        for m in 0..scenario.models.len() {
            row.extend(run.nominal_states[m][k].iter().map(|&v| fmt(v)));
        }
        let entry = if k == 0 { None } else { run.timeline.get(k - 1) };
        match entry {
            Some(e) => {
                for s in &e.statuses {
                    row.push(match s {
                        ModelStatus::Consistent { .. } => "consistent".into(),
                        ModelStatus::Invalidated => "invalidated".into(),
                    });
                }
                row.push(e.identified.map_or(String::new(), |i| i.to_string()));
            }
            None => {
                row.extend(std::iter::repeat("consistent".to_string()).take(scenario.models.len()));
                row.push(String::new());
            }
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// One verdict per simulated step, as line-delimited JSON.
pub fn write_verdict_stream<W: std::io::Write>(
    run: &SimulationRun,
    out: &mut W,
) -> std::io::Result<()> {
    for entry in &run.timeline {
        let verdict = InvalidationVerdict {
            statuses: entry.statuses.clone(),
            identified: entry.identified,
            dv_rank_deficient: false,
        };
        writeln!(out, "{}", crate::invalidation::verdict_stream_line(entry.t, &verdict))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_scenario;

    #[test]
    fn numerical_example_matches_published_data() {
        let sc = build_numerical_example();
        assert_eq!(sc.models.len(), 5);
        assert_eq!(sc.pair_count(), 10);
        assert_eq!(sc.models[0].a[(0, 0)], 0.6);
        assert_eq!(sc.models[1].a[(0, 0)], 1.0);
        assert_eq!(sc.models[2].a[(0, 1)], -0.5);
        assert_eq!(sc.models[3].b[(0, 0)], 0.0);
        assert_eq!(sc.models[4].c[(1, 1)], 0.0);
        assert_eq!(sc.horizon, 2);
        assert_eq!(sc.epsilon, 0.01);
        assert!(validate_scenario(&sc).is_ok());
    }

    #[test]
    fn intersection_matches_published_data() {
        let sc = build_intersection(&IntersectionParams::default());
        assert!(validate_scenario(&sc).is_ok());
        // Cautious model: A(4,3) = -K_p,C * dt = -0.45.
        let cautious = &sc.models[1];
        assert!((cautious.a[(3, 2)] + 0.45).abs() < 1e-12);
        assert!((cautious.a[(3, 3)] - (1.0 - 4.75 * 0.3)).abs() < 1e-12);
        // Input bounds.
        let (lo, hi) = crate::model::polytope_bounding_box(&sc.u_set).unwrap();
        assert!((lo[0] + 7.85).abs() < 1e-9 && (hi[0] - 3.97).abs() < 1e-9);
        assert_eq!(sc.epsilon, 0.25);
        // Inattentive keeps a velocity responsibility band.
        assert_eq!(sc.models[0].y_set.num_rows(), 2);
        assert_eq!(sc.models[1].y_set.num_rows(), 0);
        // Disturbance fractions scale the input bounds.
        let (dlo, dhi) = crate::model::polytope_bounding_box(&sc.models[0].d_set).unwrap();
        assert!((dlo[0] + 0.785).abs() < 1e-9 && (dhi[0] - 0.397).abs() < 1e-9);
    }

    #[test]
    fn lane_change_matches_published_data() {
        let sc = build_lane_change(&LaneChangeParams::default());
        assert!(validate_scenario(&sc).is_ok());
        assert_eq!(sc.m_u(), 2);
        // Cautious affine offset: f(5) = -L_p,C * ybar * dt = -1.5.
        assert!((sc.models[1].f[4] + 1.5).abs() < 1e-12);
        assert!((sc.models[2].f[4] - 1.2).abs() < 1e-12);
        // Other car's initial position box [7, 12].
        let (lo, hi) = crate::model::polytope_bounding_box(&sc.x0_set).unwrap();
        assert!((lo[3] - 7.0).abs() < 1e-9 && (hi[3] - 12.0).abs() < 1e-9);
        // Ego initial position pinned at zero.
        assert!((lo[0]).abs() < 1e-9 && (hi[0]).abs() < 1e-9);
    }

    #[test]
    fn builders_are_deterministic() {
        let a = crate::io::scenario_to_json(&build_numerical_example());
        let b = crate::io::scenario_to_json(&build_numerical_example());
        assert_eq!(a, b);
        let a = crate::io::scenario_to_json(&build_intersection(&IntersectionParams::default()));
        let b = crate::io::scenario_to_json(&build_intersection(&IntersectionParams::default()));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_width_noise_reproduces_simulate() {
        use crate::model::Polytope;
        use crate::stack::simulate;
        let mut sc = build_numerical_example();
        sc.w_set = Polytope::from_point(&[0.0]);
        sc.v_set = Polytope::from_point(&[0.0]);
        sc.x0_set = Polytope::from_point(&[0.5, 1.5]);
        for m in &mut sc.models {
            m.d_set = Polytope::from_point(&[0.0]);
        }
        let u: Vec<nalgebra::DVector<f64>> =
            vec![nalgebra::DVector::from_element(1, 0.3); sc.horizon];
        let run = run_simulation(&sc, 1, &u, 9).unwrap();
        let x0 = nalgebra::DVector::from_column_slice(&[0.5, 1.5]);
        let zeros1 = vec![nalgebra::DVector::zeros(1); sc.horizon];
        let zerosv = vec![nalgebra::DVector::zeros(1); sc.horizon + 1];
        let (states, _) = simulate(&sc.models[1], &x0, &u, &zeros1, &zeros1, &zerosv).unwrap();
        for (got, want) in run.states.iter().zip(states.iter()) {
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces_runs_bit_identically() {
        let sc = build_numerical_example();
        let u: Vec<nalgebra::DVector<f64>> =
            vec![nalgebra::DVector::from_element(1, 0.1); sc.horizon];
        let a = run_simulation(&sc, 2, &u, 77).unwrap();
        let b = run_simulation(&sc, 2, &u, 77).unwrap();
        assert_eq!(crate::io::to_json_17(&a).unwrap(), crate::io::to_json_17(&b).unwrap());
    }

    #[test]
    fn sampled_uncertainties_lie_in_their_polytopes() {
        let sc = build_numerical_example();
        let u: Vec<nalgebra::DVector<f64>> =
            vec![nalgebra::DVector::from_element(1, -0.4); sc.horizon];
        let run = run_simulation(&sc, 0, &u, 5).unwrap();
        let model = &sc.models[0];
        assert!(sc
            .x0_set
            .contains(&nalgebra::DVector::from_column_slice(&run.x0), 1e-12));
        for d in &run.d {
            assert!(model.d_set.contains(&nalgebra::DVector::from_column_slice(d), 1e-12));
        }
        for w in &run.w {
            assert!(sc.w_set.contains(&nalgebra::DVector::from_column_slice(w), 1e-12));
        }
        for v in &run.v {
            assert!(sc.v_set.contains(&nalgebra::DVector::from_column_slice(v), 1e-12));
        }
    }
}
