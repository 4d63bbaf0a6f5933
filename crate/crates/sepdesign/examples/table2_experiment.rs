//! Scratch experiment: numerical-example designs for both formulations.

use nalgebra::DVector;
use sepdesign::formulation::{
    design_conservative, design_exact, pair_elimination, solve_inner, ExactOptions,
};
use sepdesign::model::{validate_scenario, ObjectiveSpec};
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use sepdesign::stack::stack_pair;
use std::time::Instant;

fn main() {
    let scenario = build_numerical_example();
    let report = validate_scenario(&scenario);
    println!("validation ok: {}", report.is_ok());
    let params = SolverParams::default();

    let pairs: Vec<_> = scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    println!("pair (0,1): eta={} kappa={} xi={} rho={}", pairs[0].eta, pairs[0].kappa, pairs[0].xi, pairs[0].rho);

    let t0 = Instant::now();
    let elim = pair_elimination(&scenario, &pairs, &params).unwrap();
    println!("eliminated {} of {} pairs: {:?}  ({:.2}s)", elim.eliminated.len(), pairs.len(), elim.eliminated, t0.elapsed().as_secs_f64());

    let u0 = DVector::zeros(2);
    for pair in &pairs {
        let inner = solve_inner(pair, &u0, &params).unwrap();
        println!("pair {:?}: delta*(0) = {:.6}", pair.pair, inner.delta_star);
    }

    for (name, obj) in [("1-norm", ObjectiveSpec::OneNorm), ("inf-norm", ObjectiveSpec::InfNorm)] {
        let mut sc = scenario.clone();
        sc.objective = obj;
        let t0 = Instant::now();
        let cons = design_conservative(&sc, &params, None).unwrap();
        println!(
            "conservative {name}: status {:?} objective {:?} ({} nodes, {:.2}s)",
            cons.status, cons.objective, cons.node_count, t0.elapsed().as_secs_f64()
        );
        let t0 = Instant::now();
        let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
        let exact = design_exact(&sc, &params, &opts, None).unwrap();
        println!(
            "exact {name} (elim): status {:?} objective {:?} u {:?} ({} nodes, {:.2}s)",
            exact.status, exact.objective, exact.u_star, exact.node_count, t0.elapsed().as_secs_f64()
        );
    }
}
