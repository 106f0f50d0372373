//! Reference solver for equality-constrained least squares.
//!
//! Assembles and solves the full stationarity + constraint (KKT) system for
//! each row of `Ŵ`. It never forms `C⁻¹ k*` and is used to check the
//! rank-one closed form.

use crate::error::{check_dim, Error, Result};

use super::matrix::{gemm, Matrix, Trans};
use super::solve::Lu;

/// Exact minimizer of `‖Ŵ K − V‖_F` subject to `Ŵ k* = v*`.
///
/// For row `w` of `Ŵ` and row `y` of `V` the optimality system is
///
/// ```text
/// [ K Kᵀ  k* ] [ wᵀ ]   [ K yᵀ ]
/// [ k*ᵀ   0  ] [ μ  ] = [ v*_r ]
/// ```
pub fn constrained_ls_oracle(k: &Matrix, v: &Matrix, k_star: &[f64], v_star: &[f64]) -> Result<Matrix> {
    let d = k.rows();
    let n = k.cols();
    let h = v.rows();
    check_dim("oracle: V columns vs K columns", n, v.cols())?;
    check_dim("oracle: k* vs K rows", d, k_star.len())?;
    check_dim("oracle: v* vs V rows", h, v_star.len())?;
    if n < d {
        return Err(Error::Config(format!(
            "oracle needs at least as many keys as dimensions (D = {d}, N = {n})"
        )));
    }

    let mut gram = Matrix::zeros(d, d);
    gemm(1.0, k, Trans::No, k, Trans::Yes, 0.0, &mut gram);
    // KKᵀ itself must be nonsingular for the unconstrained problem to be
    // well posed; surface that as a singularity error.
    Lu::factor(&gram)?;

    let mut kkt = Matrix::zeros(d + 1, d + 1);
    for i in 0..d {
        kkt.row_mut(i)[..d].copy_from_slice(gram.row(i));
        kkt[(i, d)] = k_star[i];
        kkt[(d, i)] = k_star[i];
    }
    let lu = Lu::factor(&kkt)?;

    // V Kᵀ gives every row's right-hand side at once.
    let mut vkt = Matrix::zeros(h, d);
    gemm(1.0, v, Trans::No, k, Trans::Yes, 0.0, &mut vkt);

    let mut w_hat = Matrix::zeros(h, d);
    let mut rhs = vec![0.0; d + 1];
    for r in 0..h {
        rhs[..d].copy_from_slice(vkt.row(r));
        rhs[d] = v_star[r];
        let x = lu.solve(&rhs)?;
        w_hat.row_mut(r).copy_from_slice(&x[..d]);
    }
    Ok(w_hat)
}

/// Unconstrained least-squares solution of `W K K^T = V K^T`.
pub fn normal_equations_solution(k: &Matrix, v: &Matrix) -> Result<Matrix> {
    check_dim("normal equations: V columns vs K columns", k.cols(), v.cols())?;
    let d = k.rows();
    let mut gram = Matrix::zeros(d, d);
    gemm(1.0, k, Trans::No, k, Trans::Yes, 0.0, &mut gram);
    let lu = Lu::factor(&gram)?;
    let mut vkt = Matrix::zeros(v.rows(), d);
    gemm(1.0, v, Trans::No, k, Trans::Yes, 0.0, &mut vkt);
    // Gram is symmetric, so each row w solves gram · wᵀ = (V Kᵀ)_rᵀ.
    let mut w = Matrix::zeros(v.rows(), d);
    for r in 0..v.rows() {
        let x = lu.solve(vkt.row(r))?;
        w.row_mut(r).copy_from_slice(&x);
    }
    Ok(w)
}
