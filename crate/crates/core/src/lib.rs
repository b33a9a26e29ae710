//! First-order adaptive caching for ADMM-based linear MPC.
//!
//! The offline phase ([`cache`]) solves the ρ-augmented infinite-horizon LQR
//! problem and stores the gain, cost-to-go and two derived matrices together
//! with their derivatives in ρ. The online phase ([`admm`]) runs a
//! cached-Riccati ADMM loop that rebalances ρ from normalized residuals and
//! refreshes the cache with a first-order Taylor step instead of re-solving
//! the Riccati equation.

pub mod admm;
pub mod cache;
pub mod error;
pub mod flops;
pub mod linalg;
pub mod oracle;
pub mod problem;
pub mod quadrotor;

pub use admm::{
    compute_objective, solve, solve_with_trace, IterationTrace, ResidualRecord, SolveResult, SolveStatus,
    SolverState,
};
pub use cache::{
    apply_taylor_update, build_cache, build_with_sensitivities, compute_sensitivities, load_cache, save_cache,
    solve_infinite_lqr, CacheSensitivity, LqrCache,
};
pub use error::{Error, Result};
pub use linalg::{Mat, Vector};
pub use problem::{
    reference_to_linear_costs, validate, BoxConstraints, CostSpec, LinearCosts, LtiModel, MpcProblem,
    Reference, RhoMode, SolverSettings, ValidationReport,
};
