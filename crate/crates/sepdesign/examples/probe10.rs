use sepdesign::formulation::{design_conservative, design_exact, pair_elimination, ExactOptions};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::build_numerical_example;
use sepdesign::solver::SolverParams;
use sepdesign::stack::stack_pair;

fn main() {
    let prm = SolverParams::default();
    for eps in [0.01, 0.025, 0.05, 0.1, 0.2] {
        let mut sc = build_numerical_example();
        sc.epsilon = eps;
        let pairs: Vec<_> = sc.pairs().iter().map(|&(i, j)| stack_pair(&sc, i, j)).collect();
        let elim = pair_elimination(&sc, &pairs, &prm).unwrap();
        let mut row = format!("eps={eps}: eliminated={}", elim.eliminated.len());
        for obj in [ObjectiveSpec::InfNorm, ObjectiveSpec::OneNorm] {
            sc.objective = obj;
            let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
            let e = design_exact(&sc, &prm, &opts, None).unwrap();
            let c = design_conservative(&sc, &prm, None).unwrap();
            row.push_str(&format!(
                " | {:?}: exact {:?} ({:?}), cons {:?} ({:?})",
                obj, e.objective.map(|v| (v * 1e5).round() / 1e5), e.status,
                c.objective.map(|v| (v * 1e5).round() / 1e5), c.status
            ));
        }
        eprintln!("{row}");
    }
}
