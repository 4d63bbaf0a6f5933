use sepdesign::formulation::pair_elimination;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use sepdesign::stack::stack_pair;
use std::time::Instant;

fn main() {
    let scenario = build_numerical_example();
    let params = SolverParams::default();
    let pairs: Vec<_> = scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    for pair in &pairs {
        let t0 = Instant::now();
        let one = pair_elimination(&scenario, std::slice::from_ref(pair), &params).unwrap();
        eprintln!("pair {:?}: eliminated={} ({:.3}s)", pair.pair, one.eliminated.len() == 1, t0.elapsed().as_secs_f64());
    }
}
