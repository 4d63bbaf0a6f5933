use sepdesign::formulation::{build_exact, pair_elimination};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::{solve_milp, NodeOrder, SolverParams};
use sepdesign::stack::stack_pair;
use std::time::Instant;

fn main() {
    let mut scenario = build_numerical_example();
    scenario.objective = ObjectiveSpec::InfNorm;
    let params = SolverParams::default();
    let pairs: Vec<_> = scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    let elim = pair_elimination(&scenario, &pairs, &params).unwrap();
    let retained: Vec<_> = pairs.iter().filter(|p| elim.retained.contains(&p.pair)).cloned().collect();
    eprintln!("retained: {:?}", elim.retained);
    // Single-pair exact MILPs: how hard is each?
    for pair in &retained {
        let (problem, _) = build_exact(&scenario, std::slice::from_ref(pair));
        for order in [NodeOrder::DepthFirst, NodeOrder::BestBound] {
            let mut prm = params.clone();
            prm.node_order = order;
            prm.node_limit = 300_000;
            let t0 = Instant::now();
            let sol = solve_milp(&problem, &prm).unwrap();
            eprintln!(
                "pair {:?} {:?}: {:?} obj {:?} bound {:.4} nodes {} ({:.1}s)",
                pair.pair, order, sol.status, sol.objective, sol.best_bound, sol.node_count,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
