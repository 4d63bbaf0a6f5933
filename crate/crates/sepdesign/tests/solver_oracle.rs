//! Randomized cross-checks of the LP/MILP kernel against independent
//! implementations: a textbook dense-tableau simplex for LPs and exhaustive
//! enumeration for MILPs with few branching decisions.

mod common;

use common::{enumerate_milp, random_milp};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sepdesign::solver::{solve_lp, solve_milp, MilpProblem, RowSense, SolverParams, VarSpec};
use sepdesign::{LpStatus, MilpStatus};

mod textbook {
    //! Deliberately naive two-phase tableau simplex for `min c'x`,
    //! `A x <= b`, `x >= 0`. Upper bounds are passed as explicit rows by the
    //! caller, so this code has no bound handling at all and shares nothing
    //! with the production kernel.

    pub enum Outcome {
        Optimal(f64),
        Infeasible,
        Unbounded,
    }

    pub fn solve(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Outcome {
        let m = a.len();
        let n = c.len();
        // Columns: n structural, m slacks, m artificials, then rhs.
        let width = n + 2 * m + 1;
        let mut t = vec![vec![0.0f64; width]; m];
        for i in 0..m {
            let flip = if b[i] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n {
                t[i][j] = flip * a[i][j];
            }
            t[i][n + i] = flip; // slack
            t[i][n + m + i] = 1.0; // artificial
            t[i][width - 1] = flip * b[i];
        }
        let mut basis: Vec<usize> = (0..m).map(|i| n + m + i).collect();

        // Phase 1: minimize sum of artificials.
        let mut cost1 = vec![0.0; width];
        for j in n + m..n + 2 * m {
            cost1[j] = 1.0;
        }
        if !run(&mut t, &mut basis, &cost1, n + 2 * m) {
            return Outcome::Unbounded; // cannot happen in phase 1
        }
        let infeas: f64 = basis
            .iter()
            .enumerate()
            .filter(|(_, &bj)| bj >= n + m)
            .map(|(i, _)| t[i][width - 1])
            .sum();
        if infeas > 1e-7 {
            return Outcome::Infeasible;
        }

        // Phase 2 over structural + slack columns only.
        let mut cost2 = vec![0.0; width];
        cost2[..n].copy_from_slice(c);
        if !run(&mut t, &mut basis, &cost2, n + m) {
            return Outcome::Unbounded;
        }
        let mut obj = 0.0;
        for (i, &bj) in basis.iter().enumerate() {
            if bj < n {
                obj += c[bj] * t[i][width - 1];
            }
        }
        Outcome::Optimal(obj)
    }

    fn run(t: &mut [Vec<f64>], basis: &mut [usize], cost: &[f64], ncols: usize) -> bool {
        let m = t.len();
        let width = t[0].len();
        for _iter in 0..20000 {
            // Reduced costs via the basis cost row.
            let mut entering = usize::MAX;
            let mut best = -1e-9;
            for j in 0..ncols {
                if basis.contains(&j) {
                    continue;
                }
                let mut red = cost[j];
                for i in 0..m {
                    red -= cost[basis[i]] * t[i][j];
                }
                if red < best {
                    best = red;
                    entering = j;
                }
            }
            if entering == usize::MAX {
                return true;
            }
            let mut leave = usize::MAX;
            let mut best_ratio = f64::INFINITY;
            for i in 0..m {
                if t[i][entering] > 1e-9 {
                    let ratio = t[i][width - 1] / t[i][entering];
                    if ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12 && leave != usize::MAX && basis[i] < basis[leave])
                    {
                        best_ratio = ratio;
                        leave = i;
                    }
                }
            }
            if leave == usize::MAX {
                return false;
            }
            let piv = t[leave][entering];
            for v in t[leave].iter_mut() {
                *v /= piv;
            }
            for i in 0..m {
                if i != leave {
                    let f = t[i][entering];
                    if f != 0.0 {
                        for j in 0..width {
                            t[i][j] -= f * t[leave][j];
                        }
                    }
                }
            }
            basis[leave] = entering;
        }
        panic!("textbook simplex did not terminate");
    }
}

fn random_lp(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (MilpProblem, Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    // Feasible by construction: rhs = A x* + margin for a random interior x*.
    let ub: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
    let xstar: Vec<f64> = ub.iter().map(|&u| rng.gen_range(0.0..u)).collect();
    let mut a = vec![vec![0.0f64; n]; m];
    let mut b = vec![0.0f64; m];
    for i in 0..m {
        for j in 0..n {
            if rng.gen_bool(0.6) {
                a[i][j] = rng.gen_range(-2.0..2.0);
            }
        }
        let act: f64 = (0..n).map(|j| a[i][j] * xstar[j]).sum();
        b[i] = act + rng.gen_range(0.05..1.5);
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut p = MilpProblem::new("random-lp");
    for j in 0..n {
        p.add_var(VarSpec::continuous(0.0, ub[j]));
    }
    for i in 0..m {
        let coeffs: Vec<(usize, f64)> =
            (0..n).filter(|&j| a[i][j] != 0.0).map(|j| (j, a[i][j])).collect();
        p.add_row(RowSense::Le, b[i], coeffs);
    }
    p.objective = (0..n).map(|j| (j, c[j])).collect();

    // Oracle form: upper bounds become explicit rows.
    let mut a_full = a.clone();
    let mut b_full = b.clone();
    for j in 0..n {
        let mut row = vec![0.0; n];
        row[j] = 1.0;
        a_full.push(row);
        b_full.push(ub[j]);
    }
    (p, c, a_full, b_full)
}

#[test]
fn random_lps_match_textbook_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ED1);
    let params = SolverParams::default();
    for case in 0..120 {
        let (p, c, a, b) = random_lp(&mut rng, 40, 20);
        let kernel = solve_lp(&p, &params).unwrap();
        match textbook::solve(&c, &a, &b) {
            textbook::Outcome::Optimal(obj) => {
                assert_eq!(kernel.status, LpStatus::Optimal, "case {case}");
                assert!(
                    (kernel.objective - obj).abs() <= 1e-6 * (1.0 + obj.abs()),
                    "case {case}: kernel {} vs textbook {}",
                    kernel.objective,
                    obj
                );
            }
            textbook::Outcome::Infeasible => {
                assert_eq!(kernel.status, LpStatus::Infeasible, "case {case}");
            }
            textbook::Outcome::Unbounded => {
                assert_eq!(kernel.status, LpStatus::Unbounded, "case {case}");
            }
        }
    }
}

#[test]
fn random_milps_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x417);
    let params = SolverParams::default();
    let mut feasible_count = 0;
    for case in 0..100 {
        let p = random_milp(&mut rng);
        let expected = enumerate_milp(&p, &params);
        let got = solve_milp(&p, &params).unwrap();
        match expected {
            Some(obj) => {
                feasible_count += 1;
                assert_eq!(got.status, MilpStatus::Optimal, "case {case}");
                let g = got.objective.unwrap();
                assert!(
                    (g - obj).abs() <= 1e-9 * (1.0 + obj.abs()) + 1e-9,
                    "case {case}: solver {g} vs enumeration {obj}"
                );
                // Re-verification invariant on the reported point.
                let x = got.primal.unwrap();
                assert!(p.max_violation(&x, params.sos_tol) <= params.feas_tol * 10.0);
                let recomputed = p.objective_value(&x);
                assert!((recomputed - g).abs() <= 1e-9 * (1.0 + g.abs()));
            }
            None => {
                assert_eq!(got.status, MilpStatus::Infeasible, "case {case}");
            }
        }
    }
    assert!(feasible_count >= 50, "want mostly feasible instances, got {feasible_count}");
}

#[test]
fn node_log_bound_is_monotone() {
    use sepdesign::solver::{solve_milp_ext, SolveHooks};
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let p = random_milp(&mut rng);
    let mut log: Vec<u8> = Vec::new();
    let params = SolverParams::default();
    let hooks = SolveHooks { incumbent: None, node_log: Some(Box::new(&mut log)), incumbent_every: 0 };
    let _ = solve_milp_ext(&p, &params, hooks).unwrap();
    let text = String::from_utf8(log).unwrap();
    let mut prev = f64::NEG_INFINITY;
    let mut lines = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).expect("node log line is JSON");
        let bb = v["best_bound"].as_f64().unwrap();
        assert!(bb >= prev - 1e-9, "best bound regressed: {prev} -> {bb}");
        prev = bb;
        lines += 1;
    }
    assert!(lines > 0);
}
