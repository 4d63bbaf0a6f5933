use nalgebra::DVector;
use sepdesign::formulation::solve_inner;
use sepdesign::model::validate_scenario;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use sepdesign::stack::stack_pair;

fn main() {
    eprintln!("start");
    let scenario = build_numerical_example();
    eprintln!("built");
    let report = validate_scenario(&scenario);
    eprintln!("validated: {}", report.is_ok());
    let pair = stack_pair(&scenario, 0, 1);
    eprintln!("pair built: eta={} kappa={} xi={} rho={}", pair.eta, pair.kappa, pair.xi, pair.rho);
    let params = SolverParams::default();
    let u0 = DVector::zeros(2);
    eprintln!("solving inner...");
    let inner = solve_inner(&pair, &u0, &params).unwrap();
    eprintln!("inner delta* = {}", inner.delta_star);
}
