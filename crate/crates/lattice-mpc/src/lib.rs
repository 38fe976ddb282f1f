//! Error-free lattice piecewise-affine approximation of explicit linear MPC.
//!
//! The library condenses a linear MPC problem to a parametric QP, samples its
//! explicit solution over a state box (extracting each point's local affine
//! law from the QP active set), builds disjunctive (max-of-mins) and
//! conjunctive (min-of-maxes) lattice forms over the pool of distinct laws,
//! re-samples until the pairwise sample conditions hold, and verifies the
//! pair of forms against each other and against the QP: a term-pair LP scan,
//! a Hoeffding-style statistical equivalence certificate, and two-sided
//! bound checks. When the two forms agree everywhere they both equal the
//! optimal control law on the domain.

pub mod error;
pub mod lattice;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod refine;
pub mod rng;
pub mod sampler;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{build_lattice, simplify, storage_stats, LatticeForm, LatticeKind};
pub use model::{condense, discretize_zoh, solve_dare, CondensedQp, MpcProblem, ProblemSpec};
pub use refine::{check_assumption, refine_until_valid};
pub use sampler::{sample_grid, sample_trajectories, Hyperbox, QpOracle, SampleDataset};
pub use verify::{hoeffding_validate, lp_scan, sandwich_check};
