use sepdesign::formulation::{design_conservative, design_exact, ExactOptions};
use sepdesign::model::{check_well_posedness, validate_scenario, ObjectiveSpec};
use sepdesign::scenarios::{build_intersection, IntersectionParams};
use sepdesign::solver::SolverParams;
use std::time::Instant;

fn main() {
    let sc = build_intersection(&IntersectionParams::default());
    eprintln!("validation ok: {}", validate_scenario(&sc).is_ok());
    let t0 = Instant::now();
    let wp = check_well_posedness(&sc, 100, 7).unwrap();
    eprintln!("well-posed: {} ({:.1}s)", wp.all_passed(), t0.elapsed().as_secs_f64());
    let mut prm = SolverParams::default();
    prm.node_limit = 60_000;
    for obj in [ObjectiveSpec::InfNorm, ObjectiveSpec::OneNorm] {
        let mut sc = sc.clone();
        sc.objective = obj;
        let t0 = Instant::now();
        let cons = design_conservative(&sc, &prm, None).unwrap();
        eprintln!(
            "cons {:?}: {:?} {:?} warn={:?} ({:.1}s, {} nodes)",
            obj, cons.status, cons.objective, cons.warnings.len(), t0.elapsed().as_secs_f64(), cons.node_count
        );
        let t0 = Instant::now();
        let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
        let e = design_exact(&sc, &prm, &opts, None).unwrap();
        eprintln!(
            "exact {:?}: {:?} {:?} bound {:.4} elim {:?} ({:.1}s, {} boxes)",
            obj, e.status, e.objective, e.best_bound, e.eliminated_pairs, t0.elapsed().as_secs_f64(), e.node_count
        );
    }
}
