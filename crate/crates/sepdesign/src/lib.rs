//! Separating input design and online model invalidation for constrained
//! affine models.
//!
//! The toolkit designs controlled input sequences that guarantee a finite set
//! of affine models (different operating modes, driver intentions, fault
//! types, ...) produce distinguishable output trajectories under every
//! admissible realization of the initial condition, uncontrolled inputs and
//! process/measurement noise. Two designs are available:
//!
//! - an **exact** design that reformulates the bilevel separation problem as
//!   a single-level MILP by replacing each pair's inner worst-case LP with
//!   its KKT system, with complementarity enforced through SOS-1 constraints;
//! - a **conservative** design that fixes the separation instant across
//!   uncertainty realizations and dualizes the robust constraints into an
//!   MILP with one SOS-1 pair per candidate separation row.
//!
//! The downstream identification loop replays the designed input on a
//! simulated system and rules out models that are inconsistent with the
//! observed trajectory (set-membership model invalidation).
//!
//! Everything is self-contained: the MILP kernel in [`solver`] is a dense
//! bounded-variable simplex plus branch-and-bound with native SOS-1
//! branching. No external optimization software is required, although an
//! external backend can be plugged in through a line-oriented problem file
//! format (see [`solver::format`] and [`solver::backend`]).

pub use nalgebra;

pub mod io;
pub mod invalidation;
pub mod formulation;
pub mod model;
pub mod scenarios;
pub mod solver;
pub mod stack;

pub use model::{AffineModel, ObjectiveSpec, Polytope, Scenario, ValidationReport};
pub use solver::{LpSolution, LpStatus, MilpProblem, MilpSolution, MilpStatus, SolverParams};
