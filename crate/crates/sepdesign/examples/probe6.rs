use sepdesign::formulation::{build_exact, pair_elimination};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::{solve_milp, NodeOrder, SolverParams};
use sepdesign::stack::stack_pair;
use std::time::Instant;

fn main() {
    for obj in [ObjectiveSpec::InfNorm, ObjectiveSpec::OneNorm] {
        let mut scenario = build_numerical_example();
        scenario.objective = obj;
        let params = SolverParams::default();
        let pairs: Vec<_> = scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
        let elim = pair_elimination(&scenario, &pairs, &params).unwrap();
        let retained: Vec<_> = pairs.iter().filter(|p| elim.retained.contains(&p.pair)).cloned().collect();
        for a in 0..retained.len() {
            for b in (a + 1)..retained.len() {
                let subset = vec![retained[a].clone(), retained[b].clone()];
                let (problem, _) = build_exact(&scenario, &subset);
                let mut prm = params.clone();
                prm.node_order = NodeOrder::BestBound;
                prm.node_limit = 2_000_000;
                let t0 = Instant::now();
                let sol = solve_milp(&problem, &prm).unwrap();
                eprintln!(
                    "{:?} pairs {:?}+{:?}: {:?} obj {:?} nodes {} ({:.1}s)",
                    obj, subset[0].pair, subset[1].pair, sol.status, sol.objective, sol.node_count,
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}
