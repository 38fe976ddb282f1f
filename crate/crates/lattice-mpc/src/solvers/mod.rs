//! Dense QP/LP solvers used pointwise by the sampler and the verifier.

pub mod lp;
pub mod qp;

pub use lp::{solve_lp, LpSolution, LpStatus};
pub use qp::{solve_qp, solve_qp_warm, QpSolution, QpStatus, TOL_ACT};
