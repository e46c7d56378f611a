//! Discrete-time optimal control with conserved quantities.
//!
//! This crate solves fixed-endpoint discrete-time optimal control problems
//! of Lagrange type, checks parametric transformation families for
//! quasi-invariance up to a difference gauge term, and evaluates the
//! resulting integrals of motion along extremals. First-order and
//! higher-order discrete variational problems are handled through their
//! optimal-control reductions.
//!
//! Modules:
//! - [`diff`]: dual-number forward differentiation and a finite-difference
//!   oracle for tests.
//! - [`expr`]: the expression language problems are written in.
//! - [`model`]: problem data, trajectories, extremals, symmetry families.
//! - [`pmp`]: Hamiltonian kernels and the stacked-Newton extremal solver.
//! - [`noether`]: quasi-invariance checking and conservation reports.
//! - [`calcvar`]: discrete Euler–Lagrange / Euler–Poisson layers.
//! - [`discovery`]: least-squares search for affine symmetry generators.
//! - [`fixtures`]: canonical small problems used by tests and benchmarks.
//!
//! With the default `parallel` feature, per-stage and per-trajectory
//! evaluations run on rayon; disabling the feature falls back to
//! sequential loops with identical results.
//!
//! End to end — check a family, solve for an extremal, and confirm its
//! conserved quantity holds:
//!
//! ```
//! use noether_dt_core::fixtures;
//! use noether_dt_core::model::sample_trajectories;
//! use noether_dt_core::noether::{check_quasi_invariance, conservation_report};
//! use noether_dt_core::pmp::{solve_extremal, SolverOptions};
//!
//! let (problem, _) = fixtures::swap_bilinear_normal_extremal();
//! let family = fixtures::swap_bilinear_family();
//!
//! let sample = sample_trajectories(&problem, 10, 0x5EED)?;
//! assert!(check_quasi_invariance(&problem, &family, &sample, 1e-9)?.pass);
//!
//! let solved = solve_extremal(&problem, &SolverOptions::default(), None)?;
//! assert!(solved.converged);
//! assert!(conservation_report(&family, &solved.extremal)?.pass);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod calcvar;
pub mod diff;
pub mod discovery;
mod exec;
pub mod expr;
pub mod fixtures;
pub mod model;
pub mod noether;
pub mod pmp;
