//! Solver toolkit for N-player finite-horizon linear-quadratic difference games
//! with coupled inequality constraints that admit an open-loop potential structure.
//!
//! The pipeline: verify the potential conditions on the per-player cost data,
//! pool the game into a single constrained optimal control problem, reduce its
//! two-point boundary value system to a finite-dimensional linear complementarity
//! problem over the constraint multipliers, solve that with Lemke's method, and
//! certify the recovered trajectory (KKT residuals, convexity of the condensed
//! objective, per-player best responses).

// Stage recursions index several arrays by the same k; iterator rewrites hide that.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod game;
pub mod lcp;
pub mod linalg;
pub mod nonlinear;
pub mod pipeline;
pub mod potential;
pub mod random;
pub mod smartgrid;
pub mod tpbvp;
pub mod verify;

pub use error::CoreError;
pub use game::{Dims, EquilibriumTrajectory, LqGame, NonlinearGame, SimResult, ValidationReport};
pub use pipeline::{solve_game, verify_trajectory, PipelineOutput, SolveOptions, VerifyOutput};
