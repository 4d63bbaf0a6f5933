//! Cross-cutting properties of the design formulations: KKT soundness,
//! conservatism ordering, elimination soundness, dual certificates of the
//! conservative build, and the degenerate zero-uncertainty identity.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sepdesign::formulation::{
    build_conservative, design_conservative, design_exact, pair_elimination, solve_inner,
    ExactEngine, ExactOptions,
};
use sepdesign::model::{ObjectiveSpec, Polytope, Scenario};
use sepdesign::scenarios::{build_intersection, build_numerical_example, IntersectionParams};
use sepdesign::solver::{solve_milp, MilpStatus, SolverParams};
use sepdesign::stack::{simulate, stack_all, stack_pair};

fn params() -> SolverParams {
    SolverParams::default()
}

/// Small two-model instance with a scalar input whose exact design closes
/// quickly in both engines.
fn tiny_scenario() -> Scenario {
    let base = sepdesign::model::AffineModel {
        a: DMatrix::from_row_slice(1, 1, &[0.5]),
        b: DMatrix::from_row_slice(1, 1, &[1.0]),
        bw: DMatrix::zeros(1, 0),
        c: DMatrix::identity(1, 1),
        d: DMatrix::zeros(1, 1),
        dv: DMatrix::from_row_slice(1, 1, &[1.0]),
        f: DVector::zeros(1),
        g: DVector::zeros(1),
        n_x: 1,
        n_y: 0,
        m_u: 1,
        m_d: 0,
        x_set: Polytope::whole_space(1),
        y_set: Polytope::whole_space(0),
        d_set: Polytope::whole_space(0),
    };
    let mut fast = base.clone();
    fast.a = DMatrix::from_row_slice(1, 1, &[1.0]);
    Scenario {
        models: vec![base, fast],
        horizon: 2,
        epsilon: 0.05,
        objective: ObjectiveSpec::OneNorm,
        x0_set: Polytope::from_box(&[-0.2], &[0.2]),
        u_set: Polytope::from_box(&[-1.0], &[1.0]),
        w_set: Polytope::whole_space(0),
        v_set: Polytope::from_box(&[-0.01], &[0.01]),
    }
}

#[test]
fn kkt_milp_engine_agrees_with_certified_engine() {
    let scenario = tiny_scenario();
    let mut prm = params();
    prm.node_limit = 500_000;
    let bilevel = design_exact(&scenario, &prm, &ExactOptions::default(), None).unwrap();
    let milp = design_exact(
        &scenario,
        &prm,
        &ExactOptions { engine: ExactEngine::MilpBranchAndBound, ..Default::default() },
        None,
    )
    .unwrap();
    assert_eq!(bilevel.status, MilpStatus::Optimal);
    assert_eq!(milp.status, MilpStatus::Optimal);
    let a = bilevel.objective.unwrap();
    let b = milp.objective.unwrap();
    assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "bilevel {a} vs milp {b}");
}

/// At any point the exact MILP accepts, each pair's δ variable must equal
/// the true inner optimum at the same input.
#[test]
fn kkt_soundness_delta_equals_inner_optimum() {
    let scenario = tiny_scenario();
    let pairs = vec![stack_pair(&scenario, 0, 1)];
    let (problem, assembly) = sepdesign::formulation::build_exact(&scenario, &pairs);
    let sol = solve_milp(&problem, &params()).unwrap();
    assert_eq!(sol.status, MilpStatus::Optimal);
    let x = sol.primal.unwrap();
    let u = DVector::from_column_slice(&x[assembly.u_vars.clone()]);
    for layout in &assembly.pairs {
        let inner = solve_inner(&pairs[0], &u, &params()).unwrap();
        let delta_milp = x[layout.delta];
        assert!(
            (delta_milp - inner.delta_star).abs() <= 1e-6 * (1.0 + inner.delta_star.abs()),
            "delta in MILP {delta_milp} vs inner optimum {}",
            inner.delta_star
        );
    }
}

#[test]
fn conservatism_ordering_exact_below_conservative() {
    for objective in [ObjectiveSpec::OneNorm, ObjectiveSpec::InfNorm] {
        for scenario in [tiny_scenario(), build_numerical_example()] {
            let mut sc = scenario;
            sc.objective = objective;
            let cons = design_conservative(&sc, &params(), None).unwrap();
            let opts = ExactOptions {
                eliminate: true,
                seed_from_conservative: true,
                ..Default::default()
            };
            let exact = design_exact(&sc, &params(), &opts, None).unwrap();
            if cons.status == MilpStatus::Optimal && exact.status == MilpStatus::Optimal {
                let e = exact.objective.unwrap();
                let c = cons.objective.unwrap();
                assert!(e <= c + 1e-9, "{objective:?}: exact {e} > conservative {c}");
            }
        }
    }
}

/// Every eliminated pair keeps separating at random admissible inputs.
#[test]
fn elimination_soundness_random_inputs() {
    let scenario = build_numerical_example();
    let pairs: Vec<_> =
        scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    let result = pair_elimination(&scenario, &pairs, &params()).unwrap();
    assert!(!result.eliminated.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(0xE11);
    for _ in 0..50 {
        let u = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        for pair in &pairs {
            if result.eliminated.contains(&pair.pair) {
                let inner = solve_inner(pair, &u, &params()).unwrap();
                assert!(
                    inner.delta_star >= scenario.epsilon - 1e-9,
                    "eliminated pair {:?} has delta {} at u {:?}",
                    pair.pair,
                    inner.delta_star,
                    u.as_slice()
                );
            }
        }
    }
}

/// The suboptimality warning fires exactly when the uncontrolled
/// responsibility rows couple to the input.
#[test]
fn conservative_warning_iff_coupling() {
    // Benchmark: no running state constraints at all.
    let sc = build_numerical_example();
    let global = stack_all(&sc);
    assert!(global.suboptimality_norm() <= 1e-12);
    let (_, assembly) = build_conservative(&sc, &global).unwrap();
    assert!(!assembly.suboptimal_warning);

    // Intersection base: the inattentive band does not couple to the ego.
    let sc = build_intersection(&IntersectionParams::default());
    let global = stack_all(&sc);
    assert!(global.suboptimality_norm() <= 1e-12);

    // Extra malicious-velocity band couples y-rows to the input.
    let mut params_case = IntersectionParams::default();
    params_case.malicious_velocity_bounds = Some((0.0, 10.0));
    let sc = build_intersection(&params_case);
    let global = stack_all(&sc);
    assert!(global.suboptimality_norm() > 1e-12);
    let (_, assembly) = build_conservative(&sc, &global).unwrap();
    assert!(assembly.suboptimal_warning);
}

/// The stored dual matrix certifies the robust row maxima: Φ'π_j = R_j',
/// π_j ≥ 0, π_j'φ = hstar_j.
#[test]
fn conservative_dual_certificates() {
    let sc = build_numerical_example();
    let global = stack_all(&sc);
    let (_, assembly) = build_conservative(&sc, &global).unwrap();
    let r_mat = global.r_mat();
    let phi = global.phi_mat();
    let phi_rhs = global.phi_rhs();
    for j in 0..r_mat.nrows() {
        if !assembly.hstar[j].is_finite() {
            continue;
        }
        let pi_j = assembly.pi.column(j);
        assert!(pi_j.iter().all(|&v| v >= -1e-9), "pi column {j} negative");
        let lhs = phi.transpose() * pi_j;
        let rhs = r_mat.row(j).transpose();
        let err = (lhs - rhs).abs().max();
        assert!(err <= 1e-6, "row {j}: dual equality residual {err}");
        let value: f64 = pi_j.iter().zip(phi_rhs.iter()).map(|(a, b)| a * b).sum();
        assert!(
            (value - assembly.hstar[j]).abs() <= 1e-6 * (1.0 + assembly.hstar[j].abs()),
            "row {j}: pi'phi {value} vs hstar {}",
            assembly.hstar[j]
        );
    }
}

/// With every uncertain variable pinned to a point, the inner optimum is
/// the simulated worst output gap.
#[test]
fn zero_uncertainty_inner_equals_simulated_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    for _ in 0..10 {
        let mut sc = tiny_scenario();
        let x0 = rng.gen_range(-0.2..0.2);
        sc.x0_set = Polytope::from_point(&[x0]);
        let v = rng.gen_range(-0.01..0.01);
        sc.v_set = Polytope::from_point(&[v]);
        let pair = stack_pair(&sc, 0, 1);
        let t = sc.horizon;
        let u: Vec<DVector<f64>> =
            (0..t).map(|_| DVector::from_element(1, rng.gen_range(-1.0..1.0))).collect();
        let x0v = DVector::from_element(1, x0);
        let vs = vec![DVector::from_element(1, v); t + 1];
        let empty = vec![DVector::zeros(0); t];
        let (_, z0) = simulate(&sc.models[0], &x0v, &u, &empty, &empty, &vs).unwrap();
        let (_, z1) = simulate(&sc.models[1], &x0v, &u, &empty, &empty, &vs).unwrap();
        let expected = z0
            .iter()
            .zip(z1.iter())
            .map(|(a, b)| (a - b).abs().max())
            .fold(0.0f64, f64::max);
        let u_flat = DVector::from_iterator(t, u.iter().map(|x| x[0]));
        let inner = solve_inner(&pair, &u_flat, &params()).unwrap();
        assert!(
            (inner.delta_star - expected).abs() <= 1e-8 * (1.0 + expected),
            "inner {} vs simulated {expected}",
            inner.delta_star
        );
    }
}

/// Independent optimality audit of an inner solve: the returned multipliers
/// form a weak-duality certificate whose value matches the primal optimum.
#[test]
fn inner_duality_certificate_on_benchmark() {
    let sc = build_numerical_example();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD0);
    for _ in 0..5 {
        let u = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        for &(i, j) in sc.pairs().iter() {
            let pair = stack_pair(&sc, i, j);
            let inner = solve_inner(&pair, &u, &params()).unwrap();
            let mu = DVector::from_iterator(
                pair.xi + pair.rho,
                inner.mu2.iter().chain(inner.mu3.iter()).copied(),
            );
            let mu1 = DVector::from_column_slice(&inner.mu1);
            assert!(mu.iter().chain(mu1.iter()).all(|&m| m >= -1e-9));
            let stationarity =
                (pair.r_mat.transpose() * &mu + pair.h_xbar.transpose() * &mu1).abs().max();
            assert!(stationarity <= 1e-7, "stationarity residual {stationarity}");
            let sum3: f64 = inner.mu3.iter().sum();
            assert!((sum3 - 1.0).abs() <= 1e-7);
            let su = &pair.s_mat * &u;
            let mut dual_value = 0.0;
            for r in 0..(pair.xi + pair.rho) {
                dual_value += mu[r] * (su[r] - pair.r_vec[r]);
            }
            for r in 0..pair.kappa {
                dual_value -= mu1[r] * pair.h_xbar_rhs[r];
            }
            assert!(
                (dual_value - inner.delta_star).abs() <= 1e-7 * (1.0 + inner.delta_star.abs()),
                "pair ({i},{j}): dual {dual_value} vs primal {}",
                inner.delta_star
            );
        }
    }
}
