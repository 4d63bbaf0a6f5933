//! Line-oriented problem and solution files.
//!
//! The format is the interchange surface between the formulation layer, the
//! built-in solver and external backends. Floats are printed with 17
//! significant digits so values round-trip bit-exactly.
//!
//! ```text
//! milp 1
//! name <free text>
//! vars <n>
//! v <idx> <c|b> <lb> <ub>
//! obj <idx>:<coef> ...
//! qobj <idx>:<coef> ...
//! row <le|eq> <rhs> <idx>:<coef> ...
//! sos1 <idx> <idx> ...
//! end
//! ```
//!
//! Solution files:
//!
//! ```text
//! solution 1
//! status <optimal|infeasible|unbounded|gaplimit|nodelimit|timelimit>
//! objective <v>
//! bound <v>
//! nodes <n>
//! time <seconds>
//! x <idx> <v>
//! end
//! ```

use super::{MilpProblem, MilpSolution, MilpStatus, RowSense, VarKind, VarSpec};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing `{0}` section")]
    MissingSection(&'static str),
}

fn fmt_f(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f(s: &str, line: usize) -> Result<f64, FormatError> {
    match s {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|e| FormatError::Malformed {
            line,
            message: format!("bad float {s:?}: {e}"),
        }),
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)]) {
    for &(j, c) in terms {
        let _ = write!(out, " {}:{}", j, fmt_f(c));
    }
}

fn parse_terms(parts: &[&str], line: usize) -> Result<Vec<(usize, f64)>, FormatError> {
    let mut terms = Vec::with_capacity(parts.len());
    for p in parts {
        let (idx, coef) = p.split_once(':').ok_or_else(|| FormatError::Malformed {
            line,
            message: format!("expected idx:coef, got {p:?}"),
        })?;
        let j: usize = idx.parse().map_err(|e| FormatError::Malformed {
            line,
            message: format!("bad index {idx:?}: {e}"),
        })?;
        terms.push((j, parse_f(coef, line)?));
    }
    Ok(terms)
}

/// Serialize a problem to the text format.
pub fn write_problem(p: &MilpProblem) -> String {
    let mut out = String::new();
    out.push_str("milp 1\n");
    let _ = writeln!(out, "name {}", p.name.replace('\n', " "));
    let _ = writeln!(out, "vars {}", p.vars.len());
    for (j, v) in p.vars.iter().enumerate() {
        let kind = match v.kind {
            VarKind::Continuous => 'c',
            VarKind::Binary => 'b',
        };
        let _ = writeln!(out, "v {} {} {} {}", j, kind, fmt_f(v.lb), fmt_f(v.ub));
    }
    if !p.objective.is_empty() {
        out.push_str("obj");
        write_terms(&mut out, &p.objective);
        out.push('\n');
    }
    if !p.quadratic.is_empty() {
        out.push_str("qobj");
        write_terms(&mut out, &p.quadratic);
        out.push('\n');
    }
    for row in &p.rows {
        let sense = match row.sense {
            RowSense::Le => "le",
            RowSense::Eq => "eq",
        };
        let _ = write!(out, "row {} {}", sense, fmt_f(row.rhs));
        write_terms(&mut out, &row.coeffs);
        out.push('\n');
    }
    for group in &p.sos1_groups {
        out.push_str("sos1");
        for &j in group {
            let _ = write!(out, " {j}");
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Parse a problem from the text format.
pub fn read_problem(text: &str) -> Result<MilpProblem, FormatError> {
    let mut p = MilpProblem::default();
    let mut saw_header = false;
    let mut saw_end = false;
    let mut declared_vars: Option<usize> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if saw_end {
            return Err(FormatError::Malformed { line, message: "content after end".into() });
        }
        let mut parts = trimmed.split_whitespace();
        let tag = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match tag {
            "milp" => {
                if rest.first() != Some(&"1") {
                    return Err(FormatError::Malformed { line, message: "unsupported version".into() });
                }
                saw_header = true;
            }
            "name" => {
                p.name = rest.join(" ");
            }
            "vars" => {
                let n: usize = rest
                    .first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| FormatError::Malformed { line, message: "bad vars count".into() })?;
                declared_vars = Some(n);
                p.vars = vec![VarSpec::free(); n];
            }
            "v" => {
                if rest.len() != 4 {
                    return Err(FormatError::Malformed { line, message: "v needs idx kind lb ub".into() });
                }
                let j: usize = rest[0].parse().map_err(|_| FormatError::Malformed {
                    line,
                    message: format!("bad index {:?}", rest[0]),
                })?;
                if j >= p.vars.len() {
                    return Err(FormatError::Malformed { line, message: format!("index {j} >= vars") });
                }
                let kind = match rest[1] {
                    "c" => VarKind::Continuous,
                    "b" => VarKind::Binary,
                    other => {
                        return Err(FormatError::Malformed { line, message: format!("bad kind {other:?}") })
                    }
                };
                p.vars[j] = VarSpec { lb: parse_f(rest[2], line)?, ub: parse_f(rest[3], line)?, kind };
            }
            "obj" => p.objective = parse_terms(&rest, line)?,
            "qobj" => p.quadratic = parse_terms(&rest, line)?,
            "row" => {
                if rest.len() < 2 {
                    return Err(FormatError::Malformed { line, message: "row needs sense and rhs".into() });
                }
                let sense = match rest[0] {
                    "le" => RowSense::Le,
                    "eq" => RowSense::Eq,
                    other => {
                        return Err(FormatError::Malformed { line, message: format!("bad sense {other:?}") })
                    }
                };
                let rhs = parse_f(rest[1], line)?;
                let coeffs = parse_terms(&rest[2..], line)?;
                p.rows.push(super::RowSpec { coeffs, sense, rhs });
            }
            "sos1" => {
                let mut group = Vec::with_capacity(rest.len());
                for s in &rest {
                    group.push(s.parse::<usize>().map_err(|_| FormatError::Malformed {
                        line,
                        message: format!("bad index {s:?}"),
                    })?);
                }
                p.sos1_groups.push(group);
            }
            "end" => saw_end = true,
            other => {
                return Err(FormatError::Malformed { line, message: format!("unknown tag {other:?}") })
            }
        }
    }
    if !saw_header {
        return Err(FormatError::MissingSection("milp"));
    }
    if !saw_end {
        return Err(FormatError::MissingSection("end"));
    }
    if declared_vars.is_none() {
        return Err(FormatError::MissingSection("vars"));
    }
    Ok(p)
}

/// Serialize a solution to the text format.
pub fn write_solution(s: &MilpSolution) -> String {
    let mut out = String::new();
    out.push_str("solution 1\n");
    let status = match s.status {
        MilpStatus::Optimal => "optimal",
        MilpStatus::Infeasible => "infeasible",
        MilpStatus::Unbounded => "unbounded",
        MilpStatus::GapLimit => "gaplimit",
        MilpStatus::NodeLimit => "nodelimit",
        MilpStatus::TimeLimit => "timelimit",
    };
    let _ = writeln!(out, "status {status}");
    if let Some(obj) = s.objective {
        let _ = writeln!(out, "objective {}", fmt_f(obj));
    }
    let _ = writeln!(out, "bound {}", fmt_f(s.best_bound));
    let _ = writeln!(out, "nodes {}", s.node_count);
    let _ = writeln!(out, "time {}", fmt_f(s.wall_time_seconds));
    if let Some(x) = &s.primal {
        for (j, v) in x.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "x {} {}", j, fmt_f(*v));
            }
        }
        let _ = writeln!(out, "xlen {}", x.len());
    }
    out.push_str("end\n");
    out
}

/// Parse a solution file produced by a backend.
pub fn read_solution(text: &str) -> Result<MilpSolution, FormatError> {
    let mut status: Option<MilpStatus> = None;
    let mut objective = None;
    let mut best_bound = f64::NEG_INFINITY;
    let mut node_count = 0u64;
    let mut wall = 0.0;
    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut xlen: Option<usize> = None;
    let mut saw_end = false;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let tag = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match tag {
            "solution" => {}
            "status" => {
                status = Some(match rest.first().copied() {
                    Some("optimal") => MilpStatus::Optimal,
                    Some("infeasible") => MilpStatus::Infeasible,
                    Some("unbounded") => MilpStatus::Unbounded,
                    Some("gaplimit") => MilpStatus::GapLimit,
                    Some("nodelimit") => MilpStatus::NodeLimit,
                    Some("timelimit") => MilpStatus::TimeLimit,
                    other => {
                        return Err(FormatError::Malformed {
                            line,
                            message: format!("bad status {other:?}"),
                        })
                    }
                });
            }
            "objective" => objective = Some(parse_f(rest.first().copied().unwrap_or(""), line)?),
            "bound" => best_bound = parse_f(rest.first().copied().unwrap_or(""), line)?,
            "nodes" => {
                node_count = rest
                    .first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| FormatError::Malformed { line, message: "bad nodes".into() })?
            }
            "time" => wall = parse_f(rest.first().copied().unwrap_or(""), line)?,
            "x" => {
                if rest.len() != 2 {
                    return Err(FormatError::Malformed { line, message: "x needs idx value".into() });
                }
                let j: usize = rest[0].parse().map_err(|_| FormatError::Malformed {
                    line,
                    message: format!("bad index {:?}", rest[0]),
                })?;
                entries.push((j, parse_f(rest[1], line)?));
            }
            "xlen" => {
                xlen = Some(rest.first().and_then(|s| s.parse().ok()).ok_or_else(|| {
                    FormatError::Malformed { line, message: "bad xlen".into() }
                })?)
            }
            "end" => saw_end = true,
            other => {
                return Err(FormatError::Malformed { line, message: format!("unknown tag {other:?}") })
            }
        }
    }
    if !saw_end {
        return Err(FormatError::MissingSection("end"));
    }
    let status = status.ok_or(FormatError::MissingSection("status"))?;
    let primal = xlen.map(|n| {
        let mut x = vec![0.0; n];
        for (j, v) in entries {
            if j < n {
                x[j] = v;
            }
        }
        x
    });
    Ok(MilpSolution {
        status,
        objective,
        primal,
        best_bound,
        node_count,
        wall_time_seconds: wall,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{RowSense, VarSpec};
    use super::*;

    #[test]
    fn problem_round_trip_is_exact() {
        let mut p = MilpProblem::new("rt");
        let a = p.add_var(VarSpec::continuous(-1.0 / 3.0, f64::INFINITY));
        let b = p.add_var(VarSpec::binary());
        p.add_row(RowSense::Le, 0.1 + 0.2, vec![(a, std::f64::consts::PI), (b, -1e-17)]);
        p.add_row(RowSense::Eq, -3.5, vec![(a, 1.0)]);
        p.add_sos1(vec![a, b]);
        p.objective = vec![(a, 1.0), (b, 2.5)];
        let text = write_problem(&p);
        let q = read_problem(&text).unwrap();
        assert_eq!(q.vars.len(), 2);
        assert_eq!(q.vars[0].lb, p.vars[0].lb);
        assert_eq!(q.vars[0].ub, f64::INFINITY);
        assert_eq!(q.rows[0].rhs, p.rows[0].rhs);
        assert_eq!(q.rows[0].coeffs[0].1, std::f64::consts::PI);
        assert_eq!(q.rows[0].coeffs[1].1, -1e-17);
        assert_eq!(q.sos1_groups, p.sos1_groups);
        assert_eq!(q.objective, p.objective);
        assert_eq!(q.name, "rt");
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(read_problem("milp 1\nvars 1\nv 0 z 0 1\nend\n").is_err());
        assert!(read_problem("milp 2\nvars 0\nend\n").is_err());
        assert!(read_problem("milp 1\nvars 1\n").is_err());
        assert!(read_problem("milp 1\nvars 1\nrow le\nend\n").is_err());
    }
}
