//! Branch-and-bound with native SOS-1 branching.
//!
//! The LP relaxation drops integrality and SOS-1 groups. Branching fixes
//! variables to zero (SOS) or to an integer bound (binaries); children are
//! re-solved warm with the dual simplex from the parent basis. Exploration
//! follows best-bound or depth-first order, in both cases diving from the
//! just-solved parent so that most node transitions avoid a refactorization.

use super::lp::{BasisSnapshot, LpCore, LpOutcome};
use super::{
    Branching, MilpProblem, MilpSolution, MilpStatus, NodeOrder, SolveError, SolverParams, VarKind,
};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

/// Optional extensions to a solve: a primal heuristic that may turn a node
/// relaxation point into a full feasible point, and a sink for the
/// line-delimited JSON node log.
#[derive(Default)]
pub struct SolveHooks<'a> {
    pub incumbent: Option<Box<dyn FnMut(&[f64]) -> Option<(Vec<f64>, f64)> + 'a>>,
    pub node_log: Option<Box<dyn Write + 'a>>,
    /// Invoke the incumbent hook every this many nodes (root always).
    pub incumbent_every: u64,
    /// Externally proven lower bound on the optimum (e.g. from a valid
    /// relaxation solved separately); lets the search terminate as soon as
    /// the incumbent meets it within the gap.
    pub known_lower_bound: Option<f64>,
}

impl<'a> SolveHooks<'a> {
    pub fn none() -> Self {
        SolveHooks { incumbent: None, node_log: None, incumbent_every: 50, known_lower_bound: None }
    }
}

struct BoundChange {
    parent: Option<Arc<BoundChange>>,
    var: u32,
    lb: f64,
    ub: f64,
}

struct Node {
    id: u64,
    depth: u32,
    bound: f64,
    chain: Option<Arc<BoundChange>>,
    basis: Arc<BasisSnapshot>,
}

struct HeapNode(Node);

impl PartialEq for HeapNode {
    fn eq(&self, other: &Self) -> bool {
        self.0.bound == other.0.bound && self.0.id == other.0.id
    }
}
impl Eq for HeapNode {}
impl PartialOrd for HeapNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapNode {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for lowest-bound-first, oldest id
        // on ties.
        other
            .0
            .bound
            .total_cmp(&self.0.bound)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

enum Frontier {
    Best(BinaryHeap<HeapNode>),
    Depth(Vec<Node>),
}

impl Frontier {
    fn new(order: NodeOrder) -> Self {
        match order {
            NodeOrder::BestBound => Frontier::Best(BinaryHeap::new()),
            NodeOrder::DepthFirst => Frontier::Depth(Vec::new()),
        }
    }

    fn push(&mut self, node: Node) {
        match self {
            Frontier::Best(h) => h.push(HeapNode(node)),
            Frontier::Depth(s) => s.push(node),
        }
    }

    fn pop(&mut self) -> Option<Node> {
        match self {
            Frontier::Best(h) => h.pop().map(|hn| hn.0),
            Frontier::Depth(s) => s.pop(),
        }
    }

    fn min_bound(&self) -> f64 {
        match self {
            Frontier::Best(h) => h.peek().map_or(f64::INFINITY, |hn| hn.0.bound),
            Frontier::Depth(s) => s.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min),
        }
    }

    fn len(&self) -> usize {
        match self {
            Frontier::Best(h) => h.len(),
            Frontier::Depth(s) => s.len(),
        }
    }
}

/// Solve a mixed-integer linear program with branch-and-bound.
pub fn solve_milp(problem: &MilpProblem, params: &SolverParams) -> Result<MilpSolution, SolveError> {
    solve_milp_ext(problem, params, SolveHooks::none())
}

/// [`solve_milp`] with an incumbent heuristic and node-log sink.
pub fn solve_milp_ext(
    problem: &MilpProblem,
    params: &SolverParams,
    mut hooks: SolveHooks<'_>,
) -> Result<MilpSolution, SolveError> {
    problem.validate()?;
    if problem.is_quadratic() {
        return Err(SolveError::UnsupportedObjective);
    }
    let start = Instant::now();
    let n = problem.num_vars();
    let root_bounds: Vec<(f64, f64)> = problem.vars.iter().map(|v| (v.lb, v.ub)).collect();

    let mut core = LpCore::from_problem(problem);
    let mut node_count: u64 = 0;
    let mut next_id: u64 = 1;
    let mut incumbent: Option<(Vec<f64>, f64)> = None;
    let mut frontier = Frontier::new(params.node_order);

    let root_outcome = core.solve_primal(params)?;
    node_count += 1;
    match root_outcome {
        LpOutcome::Infeasible { .. } => {
            return Ok(finished(MilpStatus::Infeasible, None, f64::INFINITY, node_count, start));
        }
        LpOutcome::Unbounded { .. } => {
            return Ok(finished(MilpStatus::Unbounded, None, f64::NEG_INFINITY, node_count, start));
        }
        LpOutcome::Optimal => {}
    }

    // State of the dive: bounds applied in `core`, LP solved.
    let mut cur_id: u64 = 0;
    let mut cur_depth: u32 = 0;
    let mut cur_bound = core.objective_value();
    let mut cur_chain: Option<Arc<BoundChange>> = None;
    let mut limit_status: Option<MilpStatus> = None;

    let gap_ok = |inc: f64, bound: f64| -> bool { bound >= inc - params.rel_gap * inc.abs().max(1.0) };
    let accept_tol = params.feas_tol.max(1e-9) * 10.0;
    let known_lb = hooks.known_lower_bound.unwrap_or(f64::NEG_INFINITY);

    'search: loop {
        if node_count >= params.node_limit {
            limit_status = Some(MilpStatus::NodeLimit);
            break 'search;
        }
        if start.elapsed().as_secs_f64() > params.time_limit_seconds {
            limit_status = Some(MilpStatus::TimeLimit);
            break 'search;
        }

        let mut decision = String::new();
        let mut dive_next: Option<(u32, f64, f64)> = None;
        let mut incumbent_updated = false;

        if incumbent.as_ref().is_some_and(|(_, obj)| gap_ok(*obj, cur_bound)) {
            decision.push_str("prune:bound");
        } else {
            let run_hook = hooks.incumbent.is_some()
                && (cur_id == 0 || (hooks.incumbent_every > 0 && node_count % hooks.incumbent_every == 0));
            if run_hook {
                let relax_point = core.primal().to_vec();
                if let Some((full, value)) = hooks.incumbent.as_mut().unwrap()(&relax_point) {
                    let recomputed = problem.objective_value(&full);
                    let acceptable = full.len() == n
                        && problem.max_violation(&full, params.sos_tol) <= accept_tol
                        && (recomputed - value).abs() <= 1e-6 * (1.0 + value.abs());
                    if acceptable && incumbent.as_ref().map_or(true, |(_, best)| recomputed < *best) {
                        incumbent = Some((full, recomputed));
                        incumbent_updated = true;
                    }
                }
            }

            match select_branch(problem, core.primal(), params) {
                None => {
                    // Relaxation point is MILP-feasible at this node.
                    let x = core.primal().to_vec();
                    let obj = core.objective_value();
                    let ok = problem.max_violation(&x, params.sos_tol) <= accept_tol;
                    if ok && incumbent.as_ref().map_or(true, |(_, best)| obj < *best) {
                        incumbent = Some((x, obj));
                        incumbent_updated = true;
                        decision.push_str("incumbent");
                    } else {
                        decision.push_str("leaf");
                    }
                }
                Some(branch) => {
                    let children = branch.children(&core);
                    decision.push_str(&branch.describe());
                    if !children.is_empty() {
                        let basis = Arc::new(core.snapshot());
                        for (k, &(var, lb, ub)) in children.iter().enumerate().rev() {
                            if k == 0 {
                                dive_next = Some((var, lb, ub));
                            } else {
                                frontier.push(Node {
                                    id: next_id,
                                    depth: cur_depth + 1,
                                    bound: cur_bound,
                                    chain: Some(Arc::new(BoundChange {
                                        parent: cur_chain.clone(),
                                        var,
                                        lb,
                                        ub,
                                    })),
                                    basis: basis.clone(),
                                });
                                next_id += 1;
                            }
                        }
                    } else {
                        decision.push_str(" prune:no-children");
                    }
                }
            }
        }

        if let Some(log) = hooks.node_log.as_mut() {
            let best_bound = frontier.min_bound().min(cur_bound);
            let inc = incumbent.as_ref().map(|(_, o)| *o);
            let _ = writeln!(
                log,
                "{{\"node\":{},\"depth\":{},\"bound\":{:.17e},\"best_bound\":{:.17e},\"incumbent\":{},\"decision\":\"{}\"}}",
                cur_id,
                cur_depth,
                cur_bound,
                best_bound,
                inc.map_or("null".to_string(), |o| format!("{o:.17e}")),
                decision,
            );
        }

        // Global gap termination (rate limited: the frontier scan is cheap
        // for best-bound but linear for depth-first).
        if incumbent_updated || node_count % 32 == 0 {
            if let Some((_, inc_obj)) = incumbent.as_ref() {
                let open = frontier
                    .min_bound()
                    .min(if dive_next.is_some() { cur_bound } else { f64::INFINITY })
                    .max(known_lb);
                if gap_ok(*inc_obj, open) {
                    break 'search;
                }
            }
        }

        // Advance: continue the dive, else pop.
        let mut advanced = false;
        if let Some((var, lb, ub)) = dive_next {
            let chain = Some(Arc::new(BoundChange { parent: cur_chain.clone(), var, lb, ub }));
            core.set_bounds(var as usize, lb, ub);
            node_count += 1;
            match solve_node(&mut core, params)? {
                LpOutcome::Optimal => {
                    cur_id = next_id;
                    next_id += 1;
                    cur_depth += 1;
                    cur_bound = cur_bound.max(core.objective_value());
                    cur_chain = chain;
                    advanced = true;
                }
                LpOutcome::Infeasible { .. } => {}
                LpOutcome::Unbounded { .. } => {
                    return Err(SolveError::Numerical(
                        "child LP unbounded after bound tightening".into(),
                    ));
                }
            }
        }

        while !advanced {
            let Some(node) = frontier.pop() else { break 'search };
            if incumbent.as_ref().is_some_and(|(_, obj)| gap_ok(*obj, node.bound)) {
                continue;
            }
            for (j, &(lb, ub)) in root_bounds.iter().enumerate() {
                core.set_bounds(j, lb, ub);
            }
            let mut link = node.chain.clone();
            let mut changes: Vec<(u32, f64, f64)> = Vec::new();
            while let Some(bc) = link {
                changes.push((bc.var, bc.lb, bc.ub));
                link = bc.parent.clone();
            }
            for &(var, lb, ub) in changes.iter().rev() {
                core.set_bounds(var as usize, lb, ub);
            }
            node_count += 1;
            let outcome = if core.load_snapshot(&node.basis).is_ok() {
                solve_node(&mut core, params)?
            } else {
                core.solve_primal(params)?
            };
            match outcome {
                LpOutcome::Optimal => {
                    cur_id = node.id;
                    cur_depth = node.depth;
                    cur_bound = node.bound.max(core.objective_value());
                    cur_chain = node.chain;
                    advanced = true;
                }
                LpOutcome::Infeasible { .. } => continue,
                LpOutcome::Unbounded { .. } => {
                    return Err(SolveError::Numerical(
                        "node LP unbounded after bound tightening".into(),
                    ));
                }
            }
        }
    }

    let open_bound = frontier.min_bound().max(known_lb);
    match (incumbent, limit_status) {
        (Some((x, obj)), status) => {
            let bb = open_bound.min(obj);
            Ok(finished(status.unwrap_or(MilpStatus::Optimal), Some((x, obj)), bb, node_count, start))
        }
        (None, Some(status)) => Ok(finished(status, None, open_bound, node_count, start)),
        (None, None) => Ok(finished(MilpStatus::Infeasible, None, f64::INFINITY, node_count, start)),
    }
}

fn finished(
    status: MilpStatus,
    incumbent: Option<(Vec<f64>, f64)>,
    best_bound: f64,
    node_count: u64,
    start: Instant,
) -> MilpSolution {
    let (primal, objective) = match incumbent {
        Some((x, o)) => (Some(x), Some(o)),
        None => (None, None),
    };
    MilpSolution {
        status,
        objective,
        primal,
        best_bound,
        node_count,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    }
}

fn solve_node(core: &mut LpCore, params: &SolverParams) -> Result<LpOutcome, SolveError> {
    match core.resolve_dual(params) {
        Ok(out) => Ok(out),
        Err(_) => core.solve_primal(params),
    }
}

enum Branch {
    /// Members sorted by |x| descending.
    Sos { group: usize, members: Vec<usize> },
    Binary { var: usize, value: f64 },
}

impl Branch {
    fn describe(&self) -> String {
        match self {
            Branch::Sos { group, .. } => format!("branch:sos {group}"),
            Branch::Binary { var, .. } => format!("branch:bin {var}"),
        }
    }

    /// Children as single bound changes `(var, lb, ub)`, dive child first.
    ///
    /// For a violated SOS-1 group with largest members m0, m1 (by |x|), the
    /// split {m1 := 0} / {m0 := 0} covers every SOS-feasible point: if m0 is
    /// nonzero all others are zero (left child), otherwise m0 is zero (right
    /// child). Each level pins one more variable, so the recursion
    /// terminates. For two-member groups this is the classic
    /// {fix-slack} / {fix-dual} complementarity split.
    fn children(&self, core: &LpCore) -> Vec<(u32, f64, f64)> {
        match self {
            Branch::Binary { var, value } => {
                let (lb, ub) = core.bounds(*var);
                let f = value.floor();
                let down = (*var as u32, lb, f.min(ub));
                let up = (*var as u32, (f + 1.0).max(lb), ub);
                let frac = value - f;
                let mut out = if frac <= 0.5 { vec![down, up] } else { vec![up, down] };
                out.retain(|&(_, l, u)| l <= u);
                out
            }
            Branch::Sos { members, .. } => {
                let zeroable = |j: usize| {
                    let (lb, ub) = core.bounds(j);
                    lb <= 0.0 && ub >= 0.0
                };
                let mut out = Vec::new();
                if members.len() >= 2 {
                    if zeroable(members[1]) {
                        out.push((members[1] as u32, 0.0, 0.0));
                    }
                    if zeroable(members[0]) {
                        out.push((members[0] as u32, 0.0, 0.0));
                    }
                }
                out
            }
        }
    }
}

/// Pick the entity to branch on, or `None` if the point is MILP-feasible:
/// the most-violated SOS-1 group of the highest declared priority (largest
/// second-max magnitude, ties by lowest group index) and the
/// most-fractional binary, ordered per [`Branching`].
fn select_branch(problem: &MilpProblem, x: &[f64], params: &SolverParams) -> Option<Branch> {
    let mut best_sos: Option<(i32, f64, usize)> = None;
    for (g, group) in problem.sos1_groups.iter().enumerate() {
        let mut largest = 0.0f64;
        let mut second = 0.0f64;
        for &j in group {
            let a = x[j].abs();
            if a > largest {
                second = largest;
                largest = a;
            } else if a > second {
                second = a;
            }
        }
        let prio = problem.sos_priorities.get(g).copied().unwrap_or(0);
        if second > params.sos_tol
            && best_sos.map_or(true, |(bp, s, _)| prio > bp || (prio == bp && second > s))
        {
            best_sos = Some((prio, second, g));
        }
    }
    let mut best_bin: Option<(f64, usize)> = None;
    for (j, v) in problem.vars.iter().enumerate() {
        if v.kind == VarKind::Binary {
            let frac = x[j] - x[j].floor();
            let dist = frac.min(1.0 - frac);
            if dist > params.feas_tol && best_bin.map_or(true, |(d, _)| dist > d) {
                best_bin = Some((dist, j));
            }
        }
    }
    let sos_branch = best_sos.map(|(_, _, g)| {
        let mut members = problem.sos1_groups[g].clone();
        members.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
        Branch::Sos { group: g, members }
    });
    let bin_branch = best_bin.map(|(_, j)| Branch::Binary { var: j, value: x[j] });
    match params.branching {
        Branching::MostViolatedSosFirst => sos_branch.or(bin_branch),
        Branching::BinaryFirst => bin_branch.or(sos_branch),
    }
}

#[allow(dead_code)]
fn frontier_len(f: &Frontier) -> usize {
    f.len()
}

#[cfg(test)]
mod tests {
    use super::super::{RowSense, VarSpec};
    use super::*;

    fn params() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn sos_pair_forces_one_zero() {
        // min x + y s.t. x + y >= 1, x,y >= 0, SOS-1 {x,y} -> 1 with one var 0
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::nonneg());
        let y = p.add_var(VarSpec::nonneg());
        p.add_row(RowSense::Le, -1.0, vec![(x, -1.0), (y, -1.0)]);
        p.add_sos1(vec![x, y]);
        p.objective = vec![(x, 1.0), (y, 1.0)];
        let sol = solve_milp(&p, &params()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        let obj = sol.objective.unwrap();
        assert!((obj - 1.0).abs() < 1e-8, "obj={obj}");
        let xv = sol.primal.unwrap();
        assert!(xv[0].abs() < 1e-7 || xv[1].abs() < 1e-7);
    }

    #[test]
    fn small_knapsack() {
        // max 8a + 5b + 4c s.t. 6a + 4b + 3c <= 12, binaries -> 13 (a=b=1)
        let mut p = MilpProblem::new("t");
        let a = p.add_var(VarSpec::binary());
        let b = p.add_var(VarSpec::binary());
        let c = p.add_var(VarSpec::binary());
        p.add_row(RowSense::Le, 12.0, vec![(a, 6.0), (b, 4.0), (c, 3.0)]);
        p.objective = vec![(a, -8.0), (b, -5.0), (c, -4.0)];
        let sol = solve_milp(&p, &params()).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert!((sol.objective.unwrap() + 13.0).abs() < 1e-8);
    }

    #[test]
    fn sos_infeasible_when_both_needed() {
        // x >= 0.5 and y >= 0.5 separately forced, SOS-1 {x,y} -> infeasible
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::continuous(0.5, 1.0));
        let y = p.add_var(VarSpec::nonneg());
        p.add_row(RowSense::Le, -0.5, vec![(y, -1.0)]);
        p.add_sos1(vec![x, y]);
        let sol = solve_milp(&p, &params()).unwrap();
        assert_eq!(sol.status, MilpStatus::Infeasible);
    }

    #[test]
    fn depth_first_is_deterministic() {
        let build = || {
            let mut p = MilpProblem::new("t");
            let vars: Vec<usize> = (0..6).map(|_| p.add_var(VarSpec::binary())).collect();
            p.add_row(
                RowSense::Le,
                15.0,
                vars.iter().zip([6.0, 5.0, 5.0, 4.0, 3.0, 3.0]).map(|(&v, w)| (v, w)).collect(),
            );
            p.objective = vars
                .iter()
                .zip([-10.0, -9.0, -8.0, -7.0, -6.0, -5.0])
                .map(|(&v, c)| (v, c))
                .collect();
            p
        };
        let mut prm = params();
        prm.node_order = NodeOrder::DepthFirst;
        let s1 = solve_milp(&build(), &prm).unwrap();
        let s2 = solve_milp(&build(), &prm).unwrap();
        assert_eq!(s1.status, MilpStatus::Optimal);
        assert_eq!(s1.node_count, s2.node_count);
        assert_eq!(s1.objective, s2.objective);
        assert_eq!(s1.primal.as_ref().unwrap(), s2.primal.as_ref().unwrap());
    }

    #[test]
    fn node_limit_carries_incumbent() {
        let mut p = MilpProblem::new("t");
        let vars: Vec<usize> = (0..10).map(|_| p.add_var(VarSpec::binary())).collect();
        let coeffs: Vec<(usize, f64)> =
            vars.iter().enumerate().map(|(i, &v)| (v, 1.0 + (i as f64) * 0.37)).collect();
        p.add_row(RowSense::Le, 3.2, coeffs.clone());
        p.objective = coeffs.iter().map(|&(v, c)| (v, -c)).collect();
        let mut prm = params();
        prm.node_limit = 3;
        let sol = solve_milp(&p, &prm).unwrap();
        assert_eq!(sol.status, MilpStatus::NodeLimit);
    }

    #[test]
    fn quadratic_objective_rejected() {
        let mut p = MilpProblem::new("t");
        let x = p.add_var(VarSpec::nonneg());
        p.quadratic = vec![(x, 1.0)];
        match solve_milp(&p, &params()) {
            Err(SolveError::UnsupportedObjective) => {}
            other => panic!("expected UnsupportedObjective, got {other:?}"),
        }
    }
}
