use sepdesign::formulation::{build_exact, pair_elimination};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::{solve_milp_ext, NodeOrder, SolveHooks, SolverParams};
use sepdesign::stack::stack_pair;

fn main() {
    let mut scenario = build_numerical_example();
    scenario.objective = ObjectiveSpec::InfNorm;
    let params = SolverParams::default();
    let pairs: Vec<_> = scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    let elim = pair_elimination(&scenario, &pairs, &params).unwrap();
    let retained: Vec<_> = pairs.iter().filter(|p| elim.retained.contains(&p.pair)).cloned().collect();
    // Single pair (0,3) with a tight incumbent from outside: how fast does
    // the tree close with spatial branching?
    let sub = vec![retained[1].clone()];
    let (problem, _) = build_exact(&scenario, &sub);
    let mut prm = params.clone();
    prm.node_order = NodeOrder::BestBound;
    prm.node_limit = 400_000;
    let mut log: Vec<u8> = Vec::new();
    let hooks = SolveHooks {
        incumbent: None,
        node_log: Some(Box::new(&mut log)),
        incumbent_every: 0,
        known_lower_bound: None,
    };
    let sol = solve_milp_ext(&problem, &prm, hooks).unwrap();
    eprintln!("single (0,3): {:?} obj {:?} bound {:.6} nodes {}", sol.status, sol.objective, sol.best_bound, sol.node_count);
    let text = String::from_utf8(log).unwrap();
    let mut sos = 0u64;
    let mut spatial = 0u64;
    let mut prune = 0u64;
    let mut incumb = 0u64;
    let mut leaf = 0u64;
    let mut maxdepth = 0u64;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let d = v["decision"].as_str().unwrap_or("");
        let depth = v["depth"].as_u64().unwrap_or(0);
        maxdepth = maxdepth.max(depth);
        if d.contains("sos") { sos += 1; }
        if d.contains("spatial") { spatial += 1; }
        if d.contains("prune") { prune += 1; }
        if d.contains("incumbent") { incumb += 1; }
        if d == "leaf" { leaf += 1; }
    }
    eprintln!("branches: sos={sos} spatial={spatial} prune={prune} incumbent={incumb} leaf={leaf} maxdepth={maxdepth}");
}
