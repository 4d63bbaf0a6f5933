use sepdesign::formulation::{design_conservative, design_exact, ExactOptions};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::{build_lane_change, LaneChangeParams};
use sepdesign::solver::SolverParams;
use std::time::Instant;

fn main() {
    let sc = build_lane_change(&LaneChangeParams::default());
    eprintln!("validation: {}", sepdesign::model::validate_scenario(&sc).is_ok());
    let mut prm = SolverParams::default();
    prm.node_limit = 300;
    prm.time_limit_seconds = 120.0;
    for obj in [ObjectiveSpec::InfNorm, ObjectiveSpec::OneNorm] {
        let mut sc = sc.clone();
        sc.objective = obj;
        let t0 = Instant::now();
        let cons = design_conservative(&sc, &prm, None).unwrap();
        eprintln!(
            "cons {:?}: {:?} {:?} sep-pass={:?} ({:.1}s)",
            obj, cons.status, cons.objective,
            cons.separations.as_ref().map(|s| s.pass),
            t0.elapsed().as_secs_f64()
        );
        let t0 = Instant::now();
        let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
        let e = design_exact(&sc, &prm, &opts, None).unwrap();
        eprintln!(
            "exact {:?}: {:?} {:?} sep-pass={:?} ({:.1}s, {} boxes)",
            obj, e.status, e.objective, e.separations.as_ref().map(|s| s.pass),
            t0.elapsed().as_secs_f64(), e.node_count
        );
    }
}
