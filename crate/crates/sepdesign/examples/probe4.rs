use sepdesign::formulation::{design_conservative, design_exact, ExactOptions};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use std::time::Instant;

fn main() {
    let params = SolverParams::default();
    for (name, obj) in [("1-norm", ObjectiveSpec::OneNorm)] {
        let mut sc = build_numerical_example();
        sc.objective = obj;
        let t0 = Instant::now();
        let cons = design_conservative(&sc, &params, None).unwrap();
        eprintln!("conservative {name}: {:?} {:?} ({:.2}s, {} nodes)", cons.status, cons.objective, t0.elapsed().as_secs_f64(), cons.node_count);
    }
    for (name, obj) in [("inf-norm", ObjectiveSpec::InfNorm), ("1-norm", ObjectiveSpec::OneNorm)] {
        let mut sc = build_numerical_example();
        sc.objective = obj;
        let mut prm = params.clone();
        prm.node_limit = 400_000;
        prm.node_order = sepdesign::solver::NodeOrder::DepthFirst;
        let t0 = Instant::now();
        let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
        let exact = design_exact(&sc, &prm, &opts, None).unwrap();
        eprintln!(
            "exact {name}: {:?} obj {:?} bound {:.4} u {:?} ({:.2}s, {} nodes)",
            exact.status, exact.objective, exact.best_bound, exact.u_star, t0.elapsed().as_secs_f64(), exact.node_count
        );
    }
}
