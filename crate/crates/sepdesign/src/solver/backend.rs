//! External solver backends.
//!
//! A backend is any executable that reads a problem file in the text format
//! of [`super::format`] and writes a solution file. The command template
//! carries `{input}` and `{output}` placeholders, e.g.
//!
//! ```text
//! sepdesign backend-solve {input} {output}
//! ```
//!
//! which makes the toolkit's own CLI usable as a backend for round-trip
//! testing. Quadratic objectives are passed through (`qobj` lines) for
//! backends that support them; the built-in kernel does not.

use super::format::{read_solution, write_problem, FormatError};
use super::{MilpProblem, MilpSolution};
use std::path::PathBuf;
use std::process::Command;
use thiserror::Error;

/// Command template for an external solver process.
#[derive(Clone, Debug)]
pub struct BackendDescriptor {
    /// Argv template; each element may contain `{input}` / `{output}`.
    pub command: Vec<String>,
    /// Directory for the problem/solution files; defaults to a fresh
    /// temporary directory.
    pub work_dir: Option<PathBuf>,
}

impl BackendDescriptor {
    /// Parse a whitespace-separated command template, e.g. from the
    /// `SEPDESIGN_BACKEND` environment variable.
    pub fn from_template(template: &str) -> Result<Self, BackendError> {
        let command: Vec<String> = template.split_whitespace().map(String::from).collect();
        if command.is_empty() {
            return Err(BackendError::EmptyCommand);
        }
        Ok(BackendDescriptor { command, work_dir: None })
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend command template is empty")]
    EmptyCommand,
    #[error("could not launch backend {command:?}: {source}")]
    Missing { command: String, source: std::io::Error },
    #[error("backend exited with {status}; stderr: {stderr}")]
    Failed { status: String, stderr: String },
    #[error("backend output could not be parsed: {0}")]
    Parse(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Round-trip a problem through an external solver process.
pub fn external_backend_solve(
    problem: &MilpProblem,
    backend: &BackendDescriptor,
) -> Result<MilpSolution, BackendError> {
    if backend.command.is_empty() {
        return Err(BackendError::EmptyCommand);
    }
    let tmp;
    let dir = match &backend.work_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            d.clone()
        }
        None => {
            tmp = std::env::temp_dir().join(format!(
                "sepdesign-backend-{}-{:x}",
                std::process::id(),
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_nanos())
                    .unwrap_or(0)
            ));
            std::fs::create_dir_all(&tmp)?;
            tmp
        }
    };
    let input = dir.join("problem.milp");
    let output = dir.join("solution.txt");
    std::fs::write(&input, write_problem(problem))?;

    let argv: Vec<String> = backend
        .command
        .iter()
        .map(|a| {
            a.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
        })
        .collect();
    let out = Command::new(&argv[0]).args(&argv[1..]).output().map_err(|source| {
        BackendError::Missing { command: argv[0].clone(), source }
    })?;
    if !out.status.success() {
        return Err(BackendError::Failed {
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    let text = std::fs::read_to_string(&output)?;
    Ok(read_solution(&text)?)
}
