//! Randomized equivalence between the condensed horizon matrices and the
//! step-by-step simulation recursion, plus the structural pair/global
//! properties the designs rely on.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sepdesign::model::{AffineModel, ObjectiveSpec, Polytope, Scenario};
use sepdesign::stack::{
    predict_outputs, predict_states, simulate, stack_all, stack_pair, stack_single,
};

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_model(rng: &mut ChaCha8Rng) -> AffineModel {
    let n_x = rng.gen_range(1..=2usize);
    let n_y = rng.gen_range(1..=2usize);
    let n = n_x + n_y;
    let m_u = rng.gen_range(1..=2usize);
    let m_d = rng.gen_range(0..=2usize);
    let m_w = rng.gen_range(0..=2usize);
    let m_v = rng.gen_range(0..=1usize);
    let p = rng.gen_range(1..=2usize);
    AffineModel {
        a: rand_mat(rng, n, n),
        b: rand_mat(rng, n, m_u + m_d),
        bw: rand_mat(rng, n, m_w),
        c: rand_mat(rng, p, n),
        d: rand_mat(rng, p, m_u + m_d),
        dv: rand_mat(rng, p, m_v),
        f: rand_vec(rng, n),
        g: rand_vec(rng, p),
        n_x,
        n_y,
        m_u,
        m_d,
        x_set: Polytope::from_box(&vec![-10.0; n_x], &vec![10.0; n_x]),
        y_set: Polytope::from_box(&vec![-10.0; n_y], &vec![10.0; n_y]),
        d_set: Polytope::from_box(&vec![-1.0; m_d], &vec![1.0; m_d]),
    }
}

fn seq(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Vec<DVector<f64>> {
    (0..steps).map(|_| rand_vec(rng, dim)).collect()
}

fn flat(seq: &[DVector<f64>]) -> DVector<f64> {
    let dim: usize = seq.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(dim);
    let mut at = 0;
    for v in seq {
        out.rows_mut(at, v.len()).copy_from(v);
        at += v.len();
    }
    out
}

/// 200 random (model, horizon) draws: stacked prediction equals simulation
/// to 1e-9 in the sup norm, for both states and outputs.
#[test]
fn condensed_matrices_match_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAC5);
    for case in 0..200 {
        let t = *[1usize, 2, 3, 5].choose(&mut rng).unwrap();
        let model = random_model(&mut rng);
        let single = stack_single(&model, t);
        let x0 = rand_vec(&mut rng, model.n());
        let u = seq(&mut rng, t, model.m_u);
        let d = seq(&mut rng, t, model.m_d);
        let w = seq(&mut rng, t, model.m_w());
        let v = seq(&mut rng, t + 1, model.m_v());
        let (states, outputs) = simulate(&model, &x0, &u, &d, &w, &v).unwrap();

        let predicted_x = predict_states(&single, &x0, &flat(&u), &flat(&d), &flat(&w));
        let simulated_x = flat(&states[1..]);
        let err_x = (&predicted_x - &simulated_x).abs().max();
        assert!(err_x <= 1e-9, "case {case}: state mismatch {err_x}");

        let predicted_z = predict_outputs(&single, &x0, &flat(&u), &flat(&d), &flat(&w), &flat(&v));
        let simulated_z = flat(&outputs);
        let err_z = (&predicted_z - &simulated_z).abs().max();
        assert!(err_z <= 1e-9, "case {case}: output mismatch {err_z}");
    }
}

#[test]
fn identity_dynamics_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = random_model(&mut rng);
    // A = I(2), T = 3: a_bar stacks three identities.
    let n = 2;
    model.a = DMatrix::identity(n, n);
    model.b = DMatrix::zeros(n, 2);
    model.bw = DMatrix::zeros(n, 1);
    model.c = DMatrix::identity(n, n);
    model.d = DMatrix::zeros(n, 2);
    model.dv = DMatrix::zeros(n, 1);
    model.f = DVector::zeros(n);
    model.g = DVector::zeros(n);
    model.n_x = 1;
    model.n_y = 1;
    model.m_u = 1;
    model.m_d = 1;
    model.x_set = Polytope::whole_space(1);
    model.y_set = Polytope::whole_space(1);
    model.d_set = Polytope::whole_space(1);
    let s = stack_single(&model, 3);
    for k in 0..3 {
        let block = s.a_bar.view((k * n, 0), (n, n)).into_owned();
        assert_eq!(block, DMatrix::identity(n, n));
    }
    // Theta: all lower blocks identity.
    for k in 0..3 {
        for j in 0..=k {
            let block = s.theta.view((k * n, j * n), (n, n)).into_owned();
            assert_eq!(block, DMatrix::identity(n, n), "theta block ({k},{j})");
        }
    }

    // Scalar a = 1, b = 1, T = 2: gamma_u = [[1,0],[1,1]].
    let scalar = AffineModel {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DMatrix::from_row_slice(1, 1, &[1.0]),
        bw: DMatrix::zeros(1, 0),
        c: DMatrix::identity(1, 1),
        d: DMatrix::zeros(1, 1),
        dv: DMatrix::zeros(1, 0),
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
    let s2 = stack_single(&scalar, 2);
    assert_eq!(s2.gamma_u, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));

    // A = [[1,0.3],[0,1]], T = 2: second block of a_bar is A^2.
    let drift = AffineModel {
        a: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]),
        ..model.clone()
    };
    let s3 = stack_single(&drift, 2);
    let second = s3.a_bar.view((2, 0), (2, 2)).into_owned();
    assert_eq!(second, DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.0, 1.0]));
}

#[test]
fn simulate_trivial_cases() {
    let model = AffineModel {
        a: DMatrix::from_element(1, 1, 1.0),
        b: DMatrix::from_row_slice(1, 1, &[1.0]),
        bw: DMatrix::zeros(1, 0),
        c: DMatrix::identity(1, 1),
        d: DMatrix::zeros(1, 1),
        dv: DMatrix::zeros(1, 0),
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
    // x(k+1) = x + u, u = 1, x0 = 0, T = 3 -> x = [0,1,2,3].
    let ones = vec![DVector::from_element(1, 1.0); 3];
    let emp = vec![DVector::zeros(0); 3];
    let emp_v = vec![DVector::zeros(0); 4];
    let (states, _) = simulate(&model, &DVector::zeros(1), &ones, &emp, &emp, &emp_v).unwrap();
    let values: Vec<f64> = states.iter().map(|s| s[0]).collect();
    assert_eq!(values, vec![0.0, 1.0, 2.0, 3.0]);

    // All-zero everything stays zero.
    let zeros = vec![DVector::zeros(1); 3];
    let (states, outputs) = simulate(&model, &DVector::zeros(1), &zeros, &emp, &emp, &emp_v).unwrap();
    assert!(states.iter().all(|s| s[0] == 0.0));
    assert!(outputs.iter().all(|z| z[0] == 0.0));

    // Length mismatch errors.
    assert!(simulate(&model, &DVector::zeros(1), &ones, &emp, &emp, &vec![DVector::zeros(0); 3])
        .is_err());
}

fn two_model_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let shape = random_model(rng);
    let mut mj = random_model(rng);
    // Align shared dims with the first model.
    mj.n_x = shape.n_x;
    mj.n_y = shape.n_y;
    mj.m_u = shape.m_u;
    let n = shape.n();
    mj.a = rand_mat(rng, n, n);
    mj.b = rand_mat(rng, n, shape.m_u + mj.m_d);
    mj.bw = rand_mat(rng, n, shape.m_w());
    mj.c = rand_mat(rng, shape.p(), n);
    mj.d = rand_mat(rng, shape.p(), shape.m_u + mj.m_d);
    mj.dv = rand_mat(rng, shape.p(), shape.m_v());
    mj.f = rand_vec(rng, n);
    mj.g = rand_vec(rng, shape.p());
    mj.x_set = shape.x_set.clone();
    mj.y_set = shape.y_set.clone();
    mj.d_set = Polytope::from_box(&vec![-1.0; mj.m_d], &vec![1.0; mj.m_d]);
    Scenario {
        x0_set: Polytope::from_box(&vec![-1.0; n], &vec![1.0; n]),
        u_set: Polytope::from_box(&vec![-2.0; shape.m_u], &vec![2.0; shape.m_u]),
        w_set: Polytope::from_box(&vec![-0.1; shape.m_w()], &vec![0.1; shape.m_w()]),
        v_set: Polytope::from_box(&vec![-0.1; shape.m_v()], &vec![0.1; shape.m_v()]),
        models: vec![shape, mj],
        horizon: 2,
        epsilon: 0.1,
        objective: ObjectiveSpec::OneNorm,
    }
}

/// stack_pair(i, j) and stack_pair(j, i) agree after swapping the ± row
/// halves and the per-model column blocks of x̄.
#[test]
fn pair_stack_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    for _ in 0..20 {
        let mut scenario = two_model_scenario(&mut rng);
        // Make the column swap well-defined.
        scenario.models[1].m_d = scenario.models[0].m_d;
        let m_d = scenario.models[0].m_d;
        let n = scenario.n();
        let t = scenario.horizon;
        scenario.models[1].b = rand_mat(&mut rng, n, scenario.m_u() + m_d);
        scenario.models[1].d = rand_mat(&mut rng, scenario.p(), scenario.m_u() + m_d);
        scenario.models[1].d_set = scenario.models[0].d_set.clone();

        let pij = stack_pair(&scenario, 0, 1);
        let pji = stack_pair(&scenario, 1, 0);

        let rho = pij.rho;
        let half = rho / 2;
        let sections = [n, t * m_d, t * scenario.m_w(), (t + 1) * scenario.m_v()];
        let mut swapped = pji.lambda.clone();
        // Swap row halves.
        let top = pji.lambda.rows(0, half).into_owned();
        let bottom = pji.lambda.rows(half, half).into_owned();
        swapped.rows_mut(0, half).copy_from(&bottom);
        swapped.rows_mut(half, half).copy_from(&top);
        // Swap the per-model column blocks within each section.
        let mut reordered = swapped.clone();
        let mut at = 0;
        for sec in sections {
            let a = swapped.columns(at, sec).into_owned();
            let b = swapped.columns(at + sec, sec).into_owned();
            reordered.columns_mut(at, sec).copy_from(&b);
            reordered.columns_mut(at + sec, sec).copy_from(&a);
            at += 2 * sec;
        }
        let err = (&reordered - &pij.lambda).abs().max();
        assert!(err <= 1e-12, "lambda symmetry violated: {err}");
    }
}

/// With all uncertainty pinned to points, the inner problem degenerates to
/// the simulated output difference; here we check the stacked residual
/// directly: lambda x̄ + (Ē Γ_u + F̄_u) u + Ē f̃ + ḡ equals the ± stacked
/// output differences of two simulations.
#[test]
fn lambda_rows_reproduce_output_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    for _ in 0..20 {
        let scenario = two_model_scenario(&mut rng);
        let t = scenario.horizon;
        let pair = stack_pair(&scenario, 0, 1);
        let (mi, mj) = (&scenario.models[0], &scenario.models[1]);
        let x0i = rand_vec(&mut rng, mi.n());
        let x0j = rand_vec(&mut rng, mj.n());
        let u = seq(&mut rng, t, mi.m_u);
        let di = seq(&mut rng, t, mi.m_d);
        let dj = seq(&mut rng, t, mj.m_d);
        let wi = seq(&mut rng, t, mi.m_w());
        let wj = seq(&mut rng, t, mj.m_w());
        let vi = seq(&mut rng, t + 1, mi.m_v());
        let vj = seq(&mut rng, t + 1, mj.m_v());
        let (_, zi) = simulate(mi, &x0i, &u, &di, &wi, &vi).unwrap();
        let (_, zj) = simulate(mj, &x0j, &u, &dj, &wj, &vj).unwrap();
        let dz = flat(&zi) - flat(&zj);

        let xbar = flat(&[
            vec![x0i, x0j],
            vec![flat(&di), flat(&dj)],
            vec![flat(&wi), flat(&wj)],
            vec![flat(&vi), flat(&vj)],
        ]
        .concat());
        let uf = flat(&u);
        let lhs = &pair.lambda * &xbar
            + (&pair.e_bar * &pair.gamma_u + &pair.f_bar_u) * &uf
            + &pair.e_bar * &pair.f_tilde
            + &pair.g_bar;
        let expect = {
            let mut v = DVector::zeros(pair.rho);
            v.rows_mut(0, dz.len()).copy_from(&dz);
            v.rows_mut(dz.len(), dz.len()).copy_from(&(-&dz));
            v
        };
        let err = (&lhs - &expect).abs().max();
        assert!(err <= 1e-9, "lambda residual mismatch: {err}");
    }
}

/// Global-stack structure: pair count rows in the ladder and domain rows.
#[test]
fn global_stack_row_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6710);
    let base = two_model_scenario(&mut rng);
    let mut scenario = base.clone();
    scenario.models.push(base.models[0].clone());
    let global = stack_all(&scenario);
    let zp = (scenario.horizon + 1) * scenario.p();
    // N = 3 -> 3 pairs.
    assert_eq!(global.e_ladder.nrows(), 3 * zp);
    assert_eq!(global.e_bar.nrows(), 6 * zp);
    // Domain rows: per model c0 + T(cd + cw) + (T+1) cv.
    let t = scenario.horizon;
    let expected: usize = scenario.models.len()
        * (scenario.x0_set.num_rows() + t * scenario.w_set.num_rows() + (t + 1) * scenario.v_set.num_rows())
        + scenario.models.iter().map(|m| t * m.d_set.num_rows()).sum::<usize>();
    assert_eq!(global.h_xbar.nrows(), expected);
}
