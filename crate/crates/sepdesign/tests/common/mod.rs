//! Shared helpers for integration suites: random MILP instances with few
//! branching decisions and the exhaustive enumeration oracle.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sepdesign::solver::{solve_lp, MilpProblem, RowSense, SolverParams, VarKind, VarSpec};
use sepdesign::LpStatus;

/// Random mixed problem with at most 12 branching decisions (binaries plus
/// two-member SOS-1 groups) and a feasible mixed assignment by
/// construction for most draws.
pub fn random_milp(rng: &mut ChaCha8Rng) -> MilpProblem {
    let n_bin = rng.gen_range(3..=6usize);
    let n_cont = rng.gen_range(4..=8usize);
    let n_sos = rng.gen_range(2..=(12 - n_bin).min(4));
    let mut p = MilpProblem::new("random-milp");
    for _ in 0..n_bin {
        p.add_var(VarSpec::binary());
    }
    let cont_start = p.num_vars();
    for _ in 0..n_cont {
        p.add_var(VarSpec::continuous(0.0, 3.0));
    }
    let n = p.num_vars();
    let xstar: Vec<f64> = (0..n)
        .map(|j| {
            if j < n_bin {
                if rng.gen_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    let m = rng.gen_range(3..=6usize);
    for _ in 0..m {
        let mut coeffs = Vec::new();
        let mut act = 0.0;
        for j in 0..n {
            if rng.gen_bool(0.5) {
                let c = rng.gen_range(-2.0..2.0);
                coeffs.push((j, c));
                act += c * xstar[j];
            }
        }
        if coeffs.is_empty() {
            continue;
        }
        p.add_row(RowSense::Le, act + rng.gen_range(-0.2..1.0), coeffs);
    }
    let mut pool: Vec<usize> = (cont_start..n).collect();
    for _ in 0..n_sos {
        if pool.len() < 2 {
            break;
        }
        let a = pool.swap_remove(rng.gen_range(0..pool.len()));
        let b = pool.swap_remove(rng.gen_range(0..pool.len()));
        p.add_sos1(vec![a, b]);
    }
    p.objective = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
    p
}

/// Brute force: enumerate all binary assignments and SOS zero patterns,
/// solving the fixed LP for each; `None` when nothing is feasible.
pub fn enumerate_milp(p: &MilpProblem, params: &SolverParams) -> Option<f64> {
    let binaries: Vec<usize> = p
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(j, _)| j)
        .collect();
    let groups = &p.sos1_groups;
    let mut best: Option<f64> = None;
    for bin_mask in 0..(1u32 << binaries.len()) {
        for sos_mask in 0..(1u32 << groups.len()) {
            let mut q = p.clone();
            q.sos1_groups.clear();
            q.sos_priorities.clear();
            for (k, &j) in binaries.iter().enumerate() {
                let v = if bin_mask & (1 << k) != 0 { 1.0 } else { 0.0 };
                q.vars[j].lb = v;
                q.vars[j].ub = v;
                q.vars[j].kind = VarKind::Continuous;
            }
            let mut ok = true;
            for (g, group) in groups.iter().enumerate() {
                let keep = if sos_mask & (1 << g) != 0 { 1 } else { 0 };
                for (idx, &j) in group.iter().enumerate() {
                    if idx != keep {
                        if q.vars[j].lb > 0.0 || q.vars[j].ub < 0.0 {
                            ok = false;
                        }
                        q.vars[j].lb = 0.0;
                        q.vars[j].ub = 0.0;
                    }
                }
            }
            if !ok {
                continue;
            }
            if let Ok(sol) = solve_lp(&q, params) {
                if sol.status == LpStatus::Optimal && best.map_or(true, |b| sol.objective < b) {
                    best = Some(sol.objective);
                }
            }
        }
    }
    best
}
