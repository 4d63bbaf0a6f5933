use sepdesign::formulation::{design_exact, ExactOptions};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use std::time::Instant;

fn main() {
    let mut sc = build_numerical_example();
    sc.objective = ObjectiveSpec::InfNorm;
    let mut prm = SolverParams::default();
    prm.node_limit = 100_000;
    let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
    let t0 = Instant::now();
    let exact = design_exact(&sc, &prm, &opts, None).unwrap();
    eprintln!(
        "exact inf: {:?} obj {:?} bound {:.6} boxes {} ({:.1}s)",
        exact.status, exact.objective, exact.best_bound, exact.node_count, t0.elapsed().as_secs_f64()
    );
}
