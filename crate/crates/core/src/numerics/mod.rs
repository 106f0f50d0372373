//! Dense linear algebra, key second-moment statistics and the constrained
//! least-squares rank-one update.

mod covariance;
mod matrix;
mod oracle;
mod rank_one;
mod solve;

pub use covariance::{auto_ridge, CovarianceAccumulator, CovarianceCache, CONDITION_LIMIT, RELATIVE_RIDGE};
pub use matrix::{all_finite, axpy, dot, norm, sub, Matrix};
pub(crate) use matrix::{gemm, Trans};
pub use oracle::{constrained_ls_oracle, normal_equations_solution};
pub use rank_one::{
    block_solution, constraint_residual, insertion_direction, rank_one_update, RankOneUpdate,
    DEGENERATE_KEY_TOLERANCE,
};
pub use solve::{cholesky, solve_linear, spd_condition_estimate, Lu, PIVOT_TOLERANCE};
