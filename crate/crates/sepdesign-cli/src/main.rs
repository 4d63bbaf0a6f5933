//! Command-line front end: scenario ingestion, input design, pair
//! elimination, design verification, model invalidation, simulation and
//! size reporting.
//!
//! Exit codes: 0 success, 1 infeasible design, 2 configuration error,
//! 3 solver limit reached, 4 external backend failure.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sepdesign::formulation::{
    complexity_report, design_conservative, design_exact, pair_elimination, verify_design,
    DesignResult, ExactOptions, FormulationKind,
};
use sepdesign::invalidation::{identify, verdict_stream_line, ObservationWindow};
use sepdesign::io::{read_scenario_file, scenario_to_json, to_json_17, to_json_pretty};
use sepdesign::model::{check_well_posedness, validate_scenario, ObjectiveSpec, Scenario};
use sepdesign::scenarios::{
    build_intersection, build_lane_change, build_numerical_example, run_simulation, write_run_csv,
    write_verdict_stream, IntersectionParams, LaneChangeParams,
};
use sepdesign::solver::{
    external_backend_solve, format as milp_format, solve_milp, BackendDescriptor, Branching,
    MilpStatus, NodeOrder, SolverParams,
};
use sepdesign::stack::{stack_all, stack_pair};

const BACKEND_ENV: &str = "SEPDESIGN_BACKEND";

#[derive(Parser)]
#[command(
    name = "sepdesign",
    about = "Separating input design and model invalidation for constrained affine models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a separating input sequence.
    Design(DesignArgs),
    /// Run the pair-elimination preprocessing and list retained pairs.
    Eliminate(ScenarioArgs),
    /// Re-verify a designed input against every model pair.
    Verify(VerifyArgs),
    /// Invalidate models against an observed window.
    Invalidate(InvalidateArgs),
    /// Simulate trajectories under a designed input and identify the mode.
    Simulate(SimulateArgs),
    /// Closed-form and measured problem sizes for both formulations.
    Complexity(ScenarioArgs),
    /// Export a built design problem in the solver text format.
    Export(ExportArgs),
    /// Solve a problem file and write a solution file (backend mode).
    BackendSolve(BackendSolveArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario source: `builtin:numerical`, `builtin:intersection`,
    /// `builtin:lane-change`, or a path to a scenario JSON document.
    #[arg(long)]
    scenario: String,
    /// Horizon override.
    #[arg(long)]
    horizon: Option<usize>,
    /// Separability index override.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Objective override.
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// Weights for the weighted objective kinds (one-norm weight, second
    /// weight).
    #[arg(long, num_args = 2, value_names = ["W1", "W2"])]
    weights: Option<Vec<f64>>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Round numbers for humans instead of 17-significant-digit output.
    #[arg(long)]
    pretty: bool,
    /// Cap pair-level parallelism (elimination / verification).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-7)]
    feas_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    rel_gap: f64,
    #[arg(long, default_value_t = 2_000_000)]
    node_limit: u64,
    #[arg(long, default_value_t = f64::INFINITY)]
    time_limit: f64,
    #[arg(long, value_enum, default_value_t = NodeOrderArg::BestBound)]
    node_order: NodeOrderArg,
    #[arg(long, value_enum, default_value_t = BranchingArg::SosFirst)]
    branching: BranchingArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum NodeOrderArg {
    BestBound,
    DepthFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchingArg {
    SosFirst,
    BinaryFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    /// ||u||_1
    One,
    /// ||u||_inf
    Inf,
    /// w1 ||u||_1 + w2 ||u||_inf (default weights 1, 2)
    OneInf,
    /// w1 ||u||_1 + w2 ||Δu||_inf (default weights 1, 1)
    OneDeltaInf,
    /// Quadratic input cost; requires an external backend.
    Quadratic,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormulationArg {
    Exact,
    Conservative,
    Both,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = FormulationArg::Both)]
    formulation: FormulationArg,
    /// Skip the pair-elimination preprocessing for the exact design.
    #[arg(long)]
    no_eliminate: bool,
    /// Skip seeding the exact search from the conservative solution.
    #[arg(long)]
    no_seed: bool,
    /// Write the solver node log (line-delimited JSON).
    #[arg(long)]
    node_log: bool,
    /// Run the sampled well-posedness check with this many samples before
    /// designing (0 skips it).
    #[arg(long, default_value_t = 0)]
    well_posedness_samples: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Design artifact produced by `design` (JSON with `u_star`).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct InvalidateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Observation window JSON: {"u_applied": [[..]], "z_observed": [[..]]}.
    #[arg(long)]
    window: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Design artifact to replay; designed on the fly when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormulationArg::Exact)]
    formulation: FormulationArg,
    /// True-model index; all models when omitted.
    #[arg(long)]
    true_model: Option<usize>,
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = FormulationArg::Exact)]
    formulation: FormulationArg,
}

#[derive(Args)]
struct BackendSolveArgs {
    /// Problem file in the solver text format.
    input: PathBuf,
    /// Solution file to write.
    output: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            2
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Design(args) => cmd_design(args),
        Command::Eliminate(args) => cmd_eliminate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Invalidate(args) => cmd_invalidate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Complexity(args) => cmd_complexity(args),
        Command::Export(args) => cmd_export(args),
        Command::BackendSolve(args) => cmd_backend_solve(args),
    }
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut scenario = match self.scenario.as_str() {
            "builtin:numerical" => build_numerical_example(),
            "builtin:intersection" => {
                let mut params = IntersectionParams::default();
                if let Some(t) = self.horizon {
                    params.horizon = t;
                }
                if let Some(eps) = self.epsilon {
                    params.epsilon = eps;
                }
                build_intersection(&params)
            }
            "builtin:lane-change" => {
                let mut params = LaneChangeParams::default();
                if let Some(t) = self.horizon {
                    params.horizon = t;
                }
                if let Some(eps) = self.epsilon {
                    params.epsilon = eps;
                }
                build_lane_change(&params)
            }
            path => read_scenario_file(Path::new(path))
                .with_context(|| format!("reading scenario {path}"))?,
        };
        if let Some(t) = self.horizon {
            scenario.horizon = t;
        }
        if let Some(eps) = self.epsilon {
            scenario.epsilon = eps;
        }
        if let Some(obj) = self.objective {
            let weights = self.weights.clone();
            scenario.objective = match obj {
                ObjectiveArg::One => ObjectiveSpec::OneNorm,
                ObjectiveArg::Inf => ObjectiveSpec::InfNorm,
                ObjectiveArg::OneInf => {
                    let w = weights.unwrap_or_else(|| vec![1.0, 2.0]);
                    ObjectiveSpec::WeightedSum { one_norm_weight: w[0], inf_norm_weight: w[1] }
                }
                ObjectiveArg::OneDeltaInf => {
                    let w = weights.unwrap_or_else(|| vec![1.0, 1.0]);
                    ObjectiveSpec::DeltaInfNorm { one_norm_weight: w[0], delta_inf_weight: w[1] }
                }
                ObjectiveArg::Quadratic => ObjectiveSpec::ExternalQuadratic,
            };
        }
        let report = validate_scenario(&scenario);
        if !report.is_ok() {
            return Err(anyhow!("scenario invalid: {:?}", report.violations));
        }
        Ok(scenario)
    }

    fn params(&self) -> SolverParams {
        SolverParams {
            feas_tol: self.solver.feas_tol,
            opt_tol: self.solver.feas_tol,
            sos_tol: self.solver.feas_tol,
            rel_gap: self.solver.rel_gap,
            node_limit: self.solver.node_limit,
            time_limit_seconds: self.solver.time_limit,
            branching: match self.solver.branching {
                BranchingArg::SosFirst => Branching::MostViolatedSosFirst,
                BranchingArg::BinaryFirst => Branching::BinaryFirst,
            },
            node_order: match self.solver.node_order {
                NodeOrderArg::BestBound => NodeOrder::BestBound,
                NodeOrderArg::DepthFirst => NodeOrder::DepthFirst,
            },
        }
    }

    fn write_artifact<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        let text = if self.pretty { to_json_pretty(value)? } else { to_json_17(value)? };
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

fn status_code(status: MilpStatus) -> i32 {
    match status {
        MilpStatus::Optimal => 0,
        MilpStatus::Infeasible | MilpStatus::Unbounded => 1,
        MilpStatus::GapLimit | MilpStatus::NodeLimit | MilpStatus::TimeLimit => 3,
    }
}

fn quadratic_design(
    scenario: &Scenario,
    args: &ScenarioArgs,
    kind: FormulationKind,
) -> Result<DesignResult> {
    // The built-in kernel has no quadratic support; round-trip through the
    // configured external backend.
    let template = std::env::var(BACKEND_ENV)
        .map_err(|_| anyhow!("quadratic objectives need {BACKEND_ENV} to point at a backend"))?;
    let backend = BackendDescriptor::from_template(&template)
        .map_err(|e| anyhow!("backend template: {e}"))?;
    let params = args.params();
    let (problem, u_vars, retained, eliminated) = match kind {
        FormulationKind::Exact => {
            let pairs: Vec<_> =
                scenario.pairs().iter().map(|&(i, j)| stack_pair(scenario, i, j)).collect();
            let elim = pair_elimination(scenario, &pairs, &params)?;
            let kept: Vec<_> =
                pairs.iter().filter(|p| elim.retained.contains(&p.pair)).cloned().collect();
            let (problem, assembly) = sepdesign::formulation::build_exact(scenario, &kept);
            (problem, assembly.u_vars, elim.retained, elim.eliminated)
        }
        FormulationKind::Conservative => {
            let global = stack_all(scenario);
            let (problem, assembly) = sepdesign::formulation::build_conservative(scenario, &global)?;
            (problem, assembly.u_vars, scenario.pairs(), Vec::new())
        }
    };
    let solution = external_backend_solve(&problem, &backend)
        .map_err(|e| anyhow!("backend failure: {e}"))?;
    let u_star = solution.primal.as_ref().map(|x| x[u_vars].to_vec());
    let separations = match &u_star {
        Some(u) => {
            let uv = sepdesign::nalgebra::DVector::from_column_slice(u);
            let pairs: Vec<_> =
                scenario.pairs().iter().map(|&(i, j)| stack_pair(scenario, i, j)).collect();
            Some(verify_design(scenario, &pairs, &uv, &params)?)
        }
        None => None,
    };
    Ok(DesignResult {
        formulation: kind,
        objective_kind: scenario.objective,
        status: solution.status,
        objective: solution.objective,
        u_star,
        separations,
        retained_pairs: retained,
        eliminated_pairs: eliminated,
        warnings: vec!["objective solved by external backend".into()],
        node_count: solution.node_count,
        wall_time_seconds: solution.wall_time_seconds,
        best_bound: solution.best_bound,
    })
}

fn run_one_design(
    scenario: &Scenario,
    args: &DesignArgs,
    kind: FormulationKind,
) -> Result<DesignResult> {
    if scenario.objective == ObjectiveSpec::ExternalQuadratic {
        return quadratic_design(scenario, &args.scenario, kind);
    }
    let params = args.scenario.params();
    let log_file = if args.node_log {
        std::fs::create_dir_all(&args.scenario.out)?;
        let name = match kind {
            FormulationKind::Exact => "exact.nodelog.jsonl",
            FormulationKind::Conservative => "conservative.nodelog.jsonl",
        };
        Some(std::fs::File::create(args.scenario.out.join(name))?)
    } else {
        None
    };
    let node_log: Option<Box<dyn std::io::Write>> =
        log_file.map(|f| Box::new(std::io::BufWriter::new(f)) as Box<dyn std::io::Write>);
    let result = match kind {
        FormulationKind::Exact => {
            let options = ExactOptions {
                eliminate: !args.no_eliminate,
                seed_from_conservative: !args.no_seed,
                ..Default::default()
            };
            design_exact(scenario, &params, &options, node_log)?
        }
        FormulationKind::Conservative => design_conservative(scenario, &params, node_log)?,
    };
    Ok(result)
}

#[derive(serde::Serialize)]
struct DesignArtifact {
    scenario: serde_json::Value,
    exact: Option<DesignResult>,
    conservative: Option<DesignResult>,
    comparison: Option<Comparison>,
}

#[derive(serde::Serialize)]
struct Comparison {
    exact_objective: Option<f64>,
    conservative_objective: Option<f64>,
    conservatism_gap: Option<f64>,
}

fn cmd_design(args: DesignArgs) -> Result<i32> {
    let scenario = args.scenario.load()?;
    if args.well_posedness_samples > 0 {
        let report = check_well_posedness(&scenario, args.well_posedness_samples, 0)?;
        println!("well-posedness (sampled, necessary only): {}", if report.all_passed() { "pass" } else { "FAIL" });
        if !report.all_passed() {
            let path = args.scenario.write_artifact("well_posedness.json", &report)?;
            println!("wrote {}", path.display());
        }
    }
    let (exact, conservative) = match args.formulation {
        FormulationArg::Exact => (Some(run_one_design(&scenario, &args, FormulationKind::Exact)?), None),
        FormulationArg::Conservative => {
            (None, Some(run_one_design(&scenario, &args, FormulationKind::Conservative)?))
        }
        FormulationArg::Both => (
            Some(run_one_design(&scenario, &args, FormulationKind::Exact)?),
            Some(run_one_design(&scenario, &args, FormulationKind::Conservative)?),
        ),
    };
    let comparison = match (&exact, &conservative) {
        (Some(e), Some(c)) => Some(Comparison {
            exact_objective: e.objective,
            conservative_objective: c.objective,
            conservatism_gap: match (e.objective, c.objective) {
                (Some(a), Some(b)) => Some(b - a),
                _ => None,
            },
        }),
        _ => None,
    };
    let mut code = 0;
    for result in [&exact, &conservative].into_iter().flatten() {
        println!(
            "{:?} {:?}: objective {:?} ({} nodes, {:.2}s)",
            result.formulation, result.status, result.objective, result.node_count,
            result.wall_time_seconds
        );
        for w in &result.warnings {
            println!("  warning: {w}");
        }
        code = code.max(status_code(result.status));
    }
    let artifact = DesignArtifact {
        scenario: scenario_to_json(&scenario),
        exact,
        conservative,
        comparison,
    };
    let path = args.scenario.write_artifact("design.json", &artifact)?;
    println!("wrote {}", path.display());
    Ok(code)
}

fn cmd_eliminate(args: ScenarioArgs) -> Result<i32> {
    let scenario = args.load()?;
    let params = args.params();
    let pairs: Vec<_> =
        scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    let result = run_parallel_elimination(&scenario, &pairs, &params, args.jobs)?;
    println!(
        "retained {} pairs, eliminated {}: {:?}",
        result.retained.len(),
        result.eliminated.len(),
        result.eliminated
    );
    let path = args.write_artifact("elimination.json", &result)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn run_parallel_elimination(
    scenario: &Scenario,
    pairs: &[sepdesign::stack::StackedPair],
    params: &SolverParams,
    jobs: usize,
) -> Result<sepdesign::formulation::EliminationResult> {
    if jobs <= 1 || pairs.len() <= 1 {
        return Ok(pair_elimination(scenario, pairs, params)?);
    }
    // Pair feasibility LPs are independent; chunk across threads and
    // reassemble in order.
    let chunks: Vec<Vec<sepdesign::stack::StackedPair>> = pairs
        .chunks(pairs.len().div_ceil(jobs))
        .map(|c| c.to_vec())
        .collect();
    let outcomes: Vec<Result<sepdesign::formulation::EliminationResult, _>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .iter()
                .map(|chunk| scope.spawn(move || pair_elimination(scenario, chunk, params)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("elimination thread panicked"))
                .collect()
        });
    let results: Vec<sepdesign::formulation::EliminationResult> =
        outcomes.into_iter().collect::<Result<_, _>>()?;
    let mut retained = Vec::new();
    let mut eliminated = Vec::new();
    let mut tol_strict = 0.0;
    for r in results {
        retained.extend(r.retained);
        eliminated.extend(r.eliminated);
        tol_strict = r.tol_strict;
    }
    retained.sort_unstable();
    eliminated.sort_unstable();
    Ok(sepdesign::formulation::EliminationResult { retained, eliminated, tol_strict })
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let scenario = args.scenario.load()?;
    let params = args.scenario.params();
    let text = std::fs::read_to_string(&args.input)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let u = extract_u(&value).ok_or_else(|| anyhow!("no u_star found in {}", args.input.display()))?;
    let uv = sepdesign::nalgebra::DVector::from_column_slice(&u);
    let pairs: Vec<_> =
        scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
    let report = verify_design(&scenario, &pairs, &uv, &params)?;
    for sep in &report.separations {
        println!(
            "pair {:?}: delta* = {:.9} {}",
            sep.pair,
            sep.delta_star,
            if sep.pass { "pass" } else { "FAIL" }
        );
    }
    println!("overall: {}", if report.pass { "pass" } else { "FAIL" });
    let path = args.scenario.write_artifact("verify.json", &report)?;
    println!("wrote {}", path.display());
    Ok(if report.pass { 0 } else { 1 })
}

fn extract_u(value: &serde_json::Value) -> Option<Vec<f64>> {
    let tree = ["u_star"]
        .iter()
        .find_map(|k| value.get(k))
        .or_else(|| value.get("exact").and_then(|e| e.get("u_star")))
        .or_else(|| value.get("conservative").and_then(|e| e.get("u_star")))
        .or_else(|| value.get("u"))?;
    tree.as_array()
        .map(|arr| arr.iter().filter_map(|v| v.as_f64()).collect())
}

#[derive(serde::Deserialize)]
struct WindowDto {
    u_applied: Vec<Vec<f64>>,
    z_observed: Vec<Vec<f64>>,
}

fn cmd_invalidate(args: InvalidateArgs) -> Result<i32> {
    let scenario = args.scenario.load()?;
    let params = args.scenario.params();
    let text = std::fs::read_to_string(&args.window)?;
    let dto: WindowDto = serde_json::from_str(&text)?;
    let window = ObservationWindow {
        u_applied: dto.u_applied.iter().map(|u| sepdesign::nalgebra::DVector::from_column_slice(u)).collect(),
        z_observed: dto.z_observed.iter().map(|z| sepdesign::nalgebra::DVector::from_column_slice(z)).collect(),
    };
    // Grow the window one step at a time and stream one verdict per step.
    std::fs::create_dir_all(&args.scenario.out)?;
    let path = args.scenario.out.join("verdicts.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let mut all_invalidated = false;
    for upto in 1..=window.window_len() {
        let prefix = ObservationWindow {
            u_applied: window.u_applied[..upto].to_vec(),
            z_observed: window.z_observed[..=upto].to_vec(),
        };
        match identify(&scenario, &prefix, &params) {
            Ok(verdict) => {
                let line = verdict_stream_line(upto, &verdict);
                println!("{line}");
                writeln!(out, "{line}")?;
            }
            Err(sepdesign::invalidation::InvalidationError::AllInvalidated { statuses }) => {
                let verdict = sepdesign::invalidation::InvalidationVerdict {
                    statuses,
                    identified: None,
                    dv_rank_deficient: false,
                };
                let line = verdict_stream_line(upto, &verdict);
                println!("{line}");
                writeln!(out, "{line}")?;
                all_invalidated = true;
            }
            Err(e) => return Err(e.into()),
        }
    }
    out.flush()?;
    println!("wrote {}", path.display());
    Ok(if all_invalidated { 1 } else { 0 })
}

#[derive(serde::Serialize)]
struct RunManifest {
    generated_at: String,
    seed: u64,
    true_model: usize,
    objective_value: Option<f64>,
    formulation: FormulationKind,
    u_star: Vec<Vec<f64>>,
    separations: Option<sepdesign::formulation::VerifyReport>,
    identified_at: Option<usize>,
    csv: String,
    verdicts: String,
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let scenario = args.scenario.load()?;
    let (u_flat, design_result): (Vec<f64>, Option<DesignResult>) = match &args.input {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            let u = extract_u(&value)
                .ok_or_else(|| anyhow!("no u_star found in {}", path.display()))?;
            (u, None)
        }
        None => {
            let kind = match args.formulation {
                FormulationArg::Conservative => FormulationKind::Conservative,
                _ => FormulationKind::Exact,
            };
            let dargs = DesignArgs {
                scenario: args.scenario.clone(),
                formulation: args.formulation,
                no_eliminate: false,
                no_seed: false,
                node_log: false,
                well_posedness_samples: 0,
            };
            let result = run_one_design(&scenario, &dargs, kind)?;
            let u = result
                .u_star
                .clone()
                .ok_or_else(|| anyhow!("design produced no input (status {:?})", result.status))?;
            (u, Some(result))
        }
    };
    let m_u = scenario.m_u();
    let u_seq: Vec<sepdesign::nalgebra::DVector<f64>> = u_flat
        .chunks(m_u)
        .map(sepdesign::nalgebra::DVector::from_column_slice)
        .collect();
    if u_seq.len() != scenario.horizon {
        return Err(anyhow!(
            "input length {} does not match horizon {}",
            u_seq.len(),
            scenario.horizon
        ));
    }
    std::fs::create_dir_all(&args.scenario.out)?;
    let models: Vec<usize> = match args.true_model {
        Some(i) => vec![i],
        None => (0..scenario.models.len()).collect(),
    };
    let mut code = 0;
    for &true_model in &models {
        for run_idx in 0..args.runs {
            let seed = args.seed
                ^ (true_model as u64).wrapping_mul(0x9E37_79B9)
                ^ run_idx.wrapping_mul(0x85EB_CA6B);
            let run = run_simulation(&scenario, true_model, &u_seq, seed)?;
            let base = format!("run_m{true_model}_s{seed}");
            let csv_path = args.scenario.out.join(format!("{base}.csv"));
            let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
            write_run_csv(&run, &scenario, &mut csv)?;
            csv.flush()?;
            let verdict_path = args.scenario.out.join(format!("{base}.verdicts.jsonl"));
            let mut vs = std::io::BufWriter::new(std::fs::File::create(&verdict_path)?);
            write_verdict_stream(&run, &mut vs)?;
            vs.flush()?;
            let manifest = RunManifest {
                generated_at: now_rfc3339(),
                seed,
                true_model,
                objective_value: design_result.as_ref().and_then(|d| d.objective),
                formulation: design_result
                    .as_ref()
                    .map_or(FormulationKind::Exact, |d| d.formulation),
                u_star: u_seq.iter().map(|u| u.as_slice().to_vec()).collect(),
                separations: design_result.as_ref().and_then(|d| d.separations.clone()),
                identified_at: sepdesign::scenarios::identified_at(&run),
                csv: format!("{base}.csv"),
                verdicts: format!("{base}.verdicts.jsonl"),
            };
            let manifest_path = args.scenario.out.join(format!("{base}.manifest.json"));
            let text = if args.scenario.pretty {
                to_json_pretty(&manifest)?
            } else {
                to_json_17(&manifest)?
            };
            std::fs::write(&manifest_path, text)?;
            let identified = sepdesign::scenarios::identified_at(&run);
            println!(
                "model {true_model} seed {seed}: identified at k = {:?}",
                identified
            );
            if identified.is_none() {
                code = code.max(1);
            }
        }
    }
    Ok(code)
}

fn now_rfc3339() -> String {
    // Seconds since the epoch keep the manifest timestamp dependency-free.
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn cmd_complexity(args: ScenarioArgs) -> Result<i32> {
    let scenario = args.load()?;
    let report = complexity_report(&scenario)?;
    println!(
        "exact: closed-form sos1={} binaries={} continuous={}; measured sos1={} binaries={} continuous={}",
        report.exact_closed_form.sos1,
        report.exact_closed_form.binaries,
        report.exact_closed_form.continuous,
        report.exact_measured.sos1,
        report.exact_measured.binaries,
        report.exact_measured.continuous,
    );
    println!(
        "conservative: closed-form sos1={} binaries={} continuous={}; measured sos1={} binaries={} continuous={}",
        report.conservative_closed_form.sos1,
        report.conservative_closed_form.binaries,
        report.conservative_closed_form.continuous,
        report.conservative_measured.sos1,
        report.conservative_measured.binaries,
        report.conservative_measured.continuous,
    );
    let path = args.write_artifact("complexity.json", &report)?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_export(args: ExportArgs) -> Result<i32> {
    let scenario = args.scenario.load()?;
    let params = args.scenario.params();
    let (problem, name) = match args.formulation {
        FormulationArg::Exact | FormulationArg::Both => {
            let pairs: Vec<_> =
                scenario.pairs().iter().map(|&(i, j)| stack_pair(&scenario, i, j)).collect();
            let elim = pair_elimination(&scenario, &pairs, &params)?;
            let kept: Vec<_> =
                pairs.iter().filter(|p| elim.retained.contains(&p.pair)).cloned().collect();
            let (problem, _) = sepdesign::formulation::build_exact(&scenario, &kept);
            (problem, "exact.milp")
        }
        FormulationArg::Conservative => {
            let global = stack_all(&scenario);
            let (problem, _) = sepdesign::formulation::build_conservative(&scenario, &global)?;
            (problem, "conservative.milp")
        }
    };
    std::fs::create_dir_all(&args.scenario.out)?;
    let path = args.scenario.out.join(name);
    std::fs::write(&path, milp_format::write_problem(&problem))?;
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_backend_solve(args: BackendSolveArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let problem = milp_format::read_problem(&text).map_err(|e| anyhow!("parse: {e}"))?;
    let params = SolverParams {
        feas_tol: args.solver.feas_tol,
        opt_tol: args.solver.feas_tol,
        sos_tol: args.solver.feas_tol,
        rel_gap: args.solver.rel_gap,
        node_limit: args.solver.node_limit,
        time_limit_seconds: args.solver.time_limit,
        branching: Branching::MostViolatedSosFirst,
        node_order: NodeOrder::BestBound,
    };
    let solution = solve_milp(&problem, &params)?;
    std::fs::write(&args.output, milp_format::write_solution(&solution))?;
    Ok(status_code(solution.status))
}

