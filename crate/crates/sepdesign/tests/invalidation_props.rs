//! Invalidation-loop properties: no false invalidation on self-generated
//! data, permanence of rulings as windows grow, and separation-guarantee
//! realization under a verified designed input.

use nalgebra::DVector;
use sepdesign::formulation::{design_exact, ExactOptions};
use sepdesign::invalidation::{identify, invalidate_model, InvalidationError, ObservationWindow};
use sepdesign::model::ObjectiveSpec;
use sepdesign::scenarios::{build_numerical_example, run_simulation};
use sepdesign::solver::SolverParams;

fn params() -> SolverParams {
    SolverParams::default()
}

/// Windows generated by simulating model i with admissible uncertainty
/// never invalidate model i.
#[test]
fn no_false_invalidation_over_seeded_runs() {
    let scenario = build_numerical_example();
    let u: Vec<DVector<f64>> = vec![DVector::from_element(1, 0.5); scenario.horizon];
    for true_model in 0..scenario.models.len() {
        for seed in 0..20u64 {
            let run = run_simulation(&scenario, true_model, &u, seed).unwrap();
            for entry in &run.timeline {
                assert!(
                    entry.statuses[true_model].is_consistent(),
                    "model {true_model} invalidated at t = {} (seed {seed})",
                    entry.t
                );
            }
        }
    }
}

/// A model ruled out on a window stays ruled out on every extension.
#[test]
fn invalidation_is_monotone_in_the_window() {
    let scenario = build_numerical_example();
    let u: Vec<DVector<f64>> = vec![DVector::from_element(1, 1.5); scenario.horizon];
    for true_model in 0..scenario.models.len() {
        for seed in 40..55u64 {
            let run = run_simulation(&scenario, true_model, &u, seed).unwrap();
            for m in 0..scenario.models.len() {
                let mut seen_invalid = false;
                for entry in &run.timeline {
                    if seen_invalid {
                        assert!(
                            !entry.statuses[m].is_consistent(),
                            "model {m} resurrected at t = {} (seed {seed})",
                            entry.t
                        );
                    }
                    if !entry.statuses[m].is_consistent() {
                        seen_invalid = true;
                    }
                }
            }
        }
    }
}

/// With a verified separating input, data simulated from model i rules out
/// every other model by the full horizon.
#[test]
fn designed_input_realizes_pairwise_guarantee() {
    let mut scenario = build_numerical_example();
    scenario.objective = ObjectiveSpec::InfNorm;
    let opts = ExactOptions { eliminate: true, seed_from_conservative: true, ..Default::default() };
    let design = design_exact(&scenario, &params(), &opts, None).unwrap();
    let report = design.separations.as_ref().unwrap();
    assert!(report.pass, "designed input must verify");
    let u: Vec<DVector<f64>> = design
        .u_star
        .as_ref()
        .unwrap()
        .chunks(scenario.m_u())
        .map(DVector::from_column_slice)
        .collect();
    for true_model in 0..scenario.models.len() {
        for seed in 100..110u64 {
            let run = run_simulation(&scenario, true_model, &u, seed).unwrap();
            let last = run.timeline.last().unwrap();
            for m in 0..scenario.models.len() {
                if m != true_model {
                    assert!(
                        !last.statuses[m].is_consistent(),
                        "model {m} survived data from {true_model} (seed {seed})"
                    );
                }
            }
            assert_eq!(last.identified, Some(true_model));
        }
    }
}

/// Window shapes are validated and the all-invalidated signal is an error
/// carrying the statuses.
#[test]
fn error_paths() {
    let scenario = build_numerical_example();
    let good = ObservationWindow {
        u_applied: vec![DVector::zeros(1); 2],
        z_observed: vec![DVector::zeros(2); 3],
    };
    // Too-short output sequence.
    let bad = ObservationWindow {
        u_applied: good.u_applied.clone(),
        z_observed: good.z_observed[..2].to_vec(),
    };
    assert!(matches!(
        invalidate_model(&scenario.models[0], &scenario, &bad, &params()),
        Err(InvalidationError::WindowShape(_))
    ));
    let absurd = ObservationWindow {
        u_applied: good.u_applied.clone(),
        z_observed: vec![DVector::from_element(2, 1e6); 3],
    };
    assert!(matches!(
        identify(&scenario, &absurd, &params()),
        Err(InvalidationError::AllInvalidated { .. })
    ));
}
