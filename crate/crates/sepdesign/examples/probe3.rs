use sepdesign::formulation::{build_conservative, design_conservative};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::{solve_milp, SolverParams};
use sepdesign::stack::stack_all;
use std::time::Instant;

fn main() {
    let mut scenario = build_numerical_example();
    scenario.objective = ObjectiveSpec::InfNorm;
    let params = SolverParams::default();
    let t0 = Instant::now();
    let global = stack_all(&scenario);
    eprintln!("stacked ({:.2}s); lambda {}x{}", t0.elapsed().as_secs_f64(), global.lambda.nrows(), global.lambda.ncols());
    let t0 = Instant::now();
    let (problem, assembly) = build_conservative(&scenario, &global).unwrap();
    eprintln!(
        "built ({:.2}s): {} vars, {} rows, {} sos groups, warning={}",
        t0.elapsed().as_secs_f64(), problem.num_vars(), problem.rows.len(), problem.sos1_groups.len(),
        assembly.suboptimal_warning
    );
    let t0 = Instant::now();
    let mut prm = params.clone();
    prm.node_limit = 200_000;
    let sol = solve_milp(&problem, &prm).unwrap();
    eprintln!(
        "solved ({:.2}s): status {:?} obj {:?} nodes {}",
        t0.elapsed().as_secs_f64(), sol.status, sol.objective, sol.node_count
    );
    let t0 = Instant::now();
    let res = design_conservative(&scenario, &params, None).unwrap();
    eprintln!("design ({:.2}s): {:?} {:?}", t0.elapsed().as_secs_f64(), res.status, res.objective);
}
