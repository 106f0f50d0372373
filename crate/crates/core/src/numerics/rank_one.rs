//! Rank-one insertion of a key/value pair into a linear associative memory.
//!
//! A matrix `W` (H×D) that minimizes `‖W K − V‖_F` over stored keys `K` and
//! values `V` is updated to `Ŵ` that minimizes the same error under the
//! equality constraint `Ŵ k* = v*`. With `C = K Kᵀ` the minimizer is
//!
//! ```text
//! Ŵ = W + v uᵀ,   u = C⁻¹ k*,   v = (v* − W k*) / (uᵀ k*)
//! ```
//!
//! where `v` is the Lagrange multiplier of the constraint. The same `(Ŵ, v)`
//! pair is the solution of the block system
//!
//! ```text
//! [Ŵ | v] · [ I    k* ]  =  [W | v*]
//!           [ −uᵀ  0  ]
//! ```
//!
//! which [`block_solution`] solves directly as a cross-check.

use crate::error::{check_dim, Error, Result};

use super::matrix::{dot, norm, Matrix};
use super::solve::{solve_linear, Lu};

/// Relative threshold on `uᵀk* / (‖u‖‖k*‖)` below which the key is
/// considered annihilated by `C⁻¹`.
pub const DEGENERATE_KEY_TOLERANCE: f64 = 1e-12;

/// Outcome of a rank-one insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneUpdate {
    /// Lagrange multiplier / left factor of the update.
    pub v: Vec<f64>,
    /// Right factor `C⁻¹ k*`.
    pub u: Vec<f64>,
    pub w_hat: Matrix,
}

impl RankOneUpdate {
    /// `Ŵ − W` materialized.
    pub fn delta(&self) -> Matrix {
        let mut d = Matrix::zeros(self.v.len(), self.u.len());
        d.add_outer(1.0, &self.v, &self.u).expect("factor shapes");
        d
    }
}

fn check_shapes(w: &Matrix, c: &Matrix, k_star: &[f64], v_star: &[f64]) -> Result<()> {
    check_dim("rank_one_update: C rows vs W cols", w.cols(), c.rows())?;
    check_dim("rank_one_update: C square", c.rows(), c.cols())?;
    check_dim("rank_one_update: k* vs W cols", w.cols(), k_star.len())?;
    check_dim("rank_one_update: v* vs W rows", w.rows(), v_star.len())?;
    Ok(())
}

/// Right factor `u = C⁻¹ k*` and the denominator `uᵀ k*`, rejecting keys
/// that `C⁻¹` maps (numerically) orthogonal to themselves.
pub fn insertion_direction(c: &Matrix, k_star: &[f64]) -> Result<(Vec<f64>, f64)> {
    let u = solve_linear(c, k_star)?;
    let denom = dot(&u, k_star);
    let scale = norm(&u) * norm(k_star);
    if !(denom > DEGENERATE_KEY_TOLERANCE * scale) || scale == 0.0 {
        return Err(Error::DegenerateKey(denom));
    }
    Ok((u, denom))
}

/// Inserts `(k*, v*)` into `W` by the closed-form rank-one update.
pub fn rank_one_update(w: &Matrix, c: &Matrix, k_star: &[f64], v_star: &[f64]) -> Result<RankOneUpdate> {
    check_shapes(w, c, k_star, v_star)?;
    let (u, denom) = insertion_direction(c, k_star)?;
    let current = w.matvec(k_star)?;
    let v: Vec<f64> = v_star
        .iter()
        .zip(&current)
        .map(|(target, now)| (target - now) / denom)
        .collect();
    let mut w_hat = w.clone();
    w_hat.add_outer(1.0, &v, &u)?;
    Ok(RankOneUpdate { v, u, w_hat })
}

/// Solves the `(D+1)`-dimensional block system for `[Ŵ | v]` directly,
/// one row of `W` at a time, without using the closed form for `v`.
pub fn block_solution(w: &Matrix, c: &Matrix, k_star: &[f64], v_star: &[f64]) -> Result<RankOneUpdate> {
    check_shapes(w, c, k_star, v_star)?;
    let d = w.cols();
    let u = solve_linear(c, k_star)?;

    // Row form: x M = y  ⇔  Mᵀ xᵀ = yᵀ, with M = [[I, k*], [−uᵀ, 0]].
    let mut mt = Matrix::zeros(d + 1, d + 1);
    for i in 0..d {
        mt[(i, i)] = 1.0;
        mt[(i, d)] = -u[i];
        mt[(d, i)] = k_star[i];
    }
    let lu = Lu::factor(&mt)?;

    let mut w_hat = Matrix::zeros(w.rows(), d);
    let mut v = Vec::with_capacity(w.rows());
    let mut rhs = vec![0.0; d + 1];
    for r in 0..w.rows() {
        rhs[..d].copy_from_slice(w.row(r));
        rhs[d] = v_star[r];
        let x = lu.solve(&rhs)?;
        w_hat.row_mut(r).copy_from_slice(&x[..d]);
        v.push(x[d]);
    }
    Ok(RankOneUpdate { v, u, w_hat })
}

/// Relative constraint residual `‖Ŵ k* − v*‖ / (1 + ‖v*‖)`.
pub fn constraint_residual(w_hat: &Matrix, k_star: &[f64], v_star: &[f64]) -> Result<f64> {
    let got = w_hat.matvec(k_star)?;
    let diff: Vec<f64> = got.iter().zip(v_star).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / (1.0 + norm(v_star)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_constraint_forces_answer() {
        let w = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let up = rank_one_update(&w, &c, &[1.0], &[5.0]).unwrap();
        assert_eq!(up.v, vec![6.0]);
        assert_eq!(up.w_hat, Matrix::from_rows(&[vec![5.0]]).unwrap());
    }

    #[test]
    fn satisfied_constraint_is_a_null_update() {
        let w = Matrix::from_fn(3, 4, |r, c| (r as f64 - c as f64) * 0.25);
        let c = Matrix::from_fn(4, 4, |r, c| if r == c { 2.0 } else { 0.1 });
        let k = [0.5, -1.0, 0.25, 2.0];
        let v_star = w.matvec(&k).unwrap();
        let up = rank_one_update(&w, &c, &k, &v_star).unwrap();
        assert!(up.v.iter().all(|x| x.abs() < 1e-15));
        assert!(up.w_hat.sub(&w).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zero_key_is_degenerate() {
        let w = Matrix::zeros(2, 2);
        let err = rank_one_update(&w, &Matrix::identity(2), &[0.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateKey(_)));
    }

    #[test]
    fn indefinite_c_that_flips_key_is_degenerate() {
        // uᵀk* < 0 when C is negative definite along k*.
        let w = Matrix::zeros(1, 2);
        let c = Matrix::diag(&[-1.0, 1.0]);
        let err = rank_one_update(&w, &c, &[1.0, 0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateKey(d) if d < 0.0));
    }

    #[test]
    fn shapes_are_checked() {
        let w = Matrix::zeros(2, 3);
        let err = rank_one_update(&w, &Matrix::identity(3), &[1.0, 0.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn block_route_matches_closed_form() {
        let w = Matrix::from_fn(3, 4, |r, c| ((r * 4 + c) as f64 * 0.7).cos());
        let c = Matrix::from_fn(4, 4, |r, c| if r == c { 3.0 } else { 0.2 * (r + c) as f64 / 6.0 });
        let k = [1.0, 0.5, -0.5, 0.25];
        let v_star = [1.0, -2.0, 0.5];
        let closed = rank_one_update(&w, &c, &k, &v_star).unwrap();
        let block = block_solution(&w, &c, &k, &v_star).unwrap();
        assert!(closed.w_hat.sub(&block.w_hat).unwrap().max_abs() < 1e-12);
        for (a, b) in closed.v.iter().zip(&block.v) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(constraint_residual(&closed.w_hat, &k, &v_star).unwrap() < 1e-12);
    }
}
