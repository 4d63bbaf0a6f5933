//! Independent audit of the exact-design incumbent: weak-duality lower
//! bounds and adversary-side local search upper bounds for every pair.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sepdesign::formulation::{design_exact, solve_inner, ExactOptions};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use sepdesign::stack::stack_pair;

fn main() {
    let mut sc = build_numerical_example();
    sc.objective = ObjectiveSpec::InfNorm;
    let prm = SolverParams::default();
    let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
    let exact = design_exact(&sc, &prm, &opts, None).unwrap();
    let u = exact.u_star.clone().unwrap();
    eprintln!("u* = {u:?}, J = {:?}", exact.objective);
    let uv = DVector::from_column_slice(&u);

    for (i, j) in sc.pairs() {
        let pair = stack_pair(&sc, i, j);
        let inner = solve_inner(&pair, &uv, &prm).unwrap();
        // Weak duality: mu >= 0, stationarity, sum(mu3) = 1 certified, then
        // delta* >= mu'(S u - r).
        let mut mu = Vec::new();
        mu.extend(&inner.mu2);
        mu.extend(&inner.mu3);
        let muv = DVector::from_column_slice(&mu);
        let mu1v = DVector::from_column_slice(&inner.mu1);
        let stat = (pair.r_mat.transpose() * &muv + pair.h_xbar.transpose() * &mu1v)
            .abs()
            .max();
        let sum3: f64 = inner.mu3.iter().sum();
        let min_mu = mu.iter().chain(inner.mu1.iter()).fold(f64::INFINITY, |a, &b| a.min(b));
        let dual_value = {
            let su = &pair.s_mat * &uv;
            let mut acc = 0.0;
            for r in 0..(pair.xi + pair.rho) {
                acc += muv[r] * (su[r] - pair.r_vec[r]);
            }
            for r in 0..pair.kappa {
                acc -= mu1v[r] * pair.h_xbar_rhs[r];
            }
            acc
        };
        // Adversary local search: upper bound on delta* by minimizing the
        // max-row value over the uncertainty box.
        let (lo, hi) = {
            let mut lo = vec![0.0; pair.eta];
            let mut hi = vec![0.0; pair.eta];
            // box bounds derivable from h_xbar rows (all singletons here)
            for m in 0..pair.eta {
                lo[m] = f64::NEG_INFINITY;
                hi[m] = f64::INFINITY;
            }
            for r in 0..pair.kappa {
                let mut nz = None;
                let mut count = 0;
                for m in 0..pair.eta {
                    if pair.h_xbar[(r, m)] != 0.0 {
                        nz = Some(m);
                        count += 1;
                    }
                }
                if count == 1 {
                    let m = nz.unwrap();
                    let c = pair.h_xbar[(r, m)];
                    let b = pair.h_xbar_rhs[r] / c;
                    if c > 0.0 { hi[m] = hi[m].min(b); } else { lo[m] = lo[m].max(b); }
                }
            }
            (lo, hi)
        };
        let su = &pair.s_mat * &uv;
        let eval = |x: &[f64]| -> f64 {
            let xv = DVector::from_column_slice(x);
            let rx = &pair.r_mat * &xv;
            let mut worst = f64::NEG_INFINITY;
            for r in pair.xi..(pair.xi + pair.rho) {
                worst = worst.max(rx[r] + su[r] - pair.r_vec[r]);
            }
            worst
        };
        let mut rng = ChaCha8Rng::seed_from_u64(42 + (i * 10 + j) as u64);
        let mut best = f64::INFINITY;
        for _ in 0..300 {
            let mut x: Vec<f64> =
                (0..pair.eta).map(|m| rng.gen_range(lo[m]..=hi[m])).collect();
            // coordinate descent
            for _ in 0..12 {
                for m in 0..pair.eta {
                    let mut cand_best = eval(&x);
                    let mut cand_v = x[m];
                    for steps in 1..=8 {
                        for dir in [-1.0, 1.0] {
                            let v = (x[m] + dir * (hi[m] - lo[m]) * 0.5f64.powi(steps))
                                .clamp(lo[m], hi[m]);
                            let old = x[m];
                            x[m] = v;
                            let val = eval(&x);
                            if val < cand_best {
                                cand_best = val;
                                cand_v = v;
                            }
                            x[m] = old;
                        }
                    }
                    x[m] = cand_v;
                }
            }
            best = best.min(eval(&x));
        }
        eprintln!(
            "pair ({i},{j}): delta*={:.6} dual={:.6} stat={:.2e} sum3={:.6} min_mu={:.2e} sampled_ub={:.6}",
            inner.delta_star, dual_value, stat, sum3, min_mu, best
        );
    }
}
