use crate::error::{check_dim, Error, Result};

use super::matrix::{dot, Matrix};

/// Relative pivot threshold below which a matrix is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

/// LU factorization with partial (row) pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        check_dim("Lu::factor (square)", a.rows(), a.cols())?;
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let bound = PIVOT_TOLERANCE * a.max_abs().max(f64::MIN_POSITIVE);

        for col in 0..n {
            let (pivot_row, pivot_abs) = (col..n)
                .map(|r| (r, lu[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot_abs > bound) {
                return Err(Error::Singular {
                    pivot: pivot_abs,
                    column: col,
                    bound,
                });
            }
            if pivot_row != col {
                perm.swap(pivot_row, col);
                for c in 0..n {
                    let tmp = lu[(col, c)];
                    lu[(col, c)] = lu[(pivot_row, c)];
                    lu[(pivot_row, c)] = tmp;
                }
            }
            let pivot = lu[(col, col)];
            for r in (col + 1)..n {
                let factor = lu[(r, col)] / pivot;
                lu[(r, col)] = factor;
                if factor != 0.0 {
                    for c in (col + 1)..n {
                        let upper = lu[(col, c)];
                        lu[(r, c)] -= factor * upper;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        check_dim("Lu::solve", n, b.len())?;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s = dot(&self.lu.row(r)[..r], &x[..r]);
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s = dot(&self.lu.row(r)[r + 1..], &x[r + 1..]);
            x[r] = (x[r] - s) / self.lu[(r, r)];
        }
        Ok(x)
    }
}

/// Solves `A x = b` by pivoted LU with one step of iterative refinement.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = Lu::factor(a)?;
    let mut x = lu.solve(b)?;
    let ax = a.matvec(&x)?;
    let residual: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let correction = lu.solve(&residual)?;
    for (xi, ci) in x.iter_mut().zip(&correction) {
        *xi += ci;
    }
    Ok(x)
}

/// Cholesky factor `L` with `A = L Lᵀ`, or `None` when `A` is not
/// numerically positive definite.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Cheap 2-norm condition estimate for a symmetric positive definite
/// matrix: squared ratio of the extreme Cholesky diagonal entries.
/// Returns infinity when the factorization breaks down.
pub fn spd_condition_estimate(a: &Matrix) -> f64 {
    match cholesky(a) {
        Some(l) => {
            let diag: Vec<f64> = (0..l.rows()).map(|i| l[(i, i)]).collect();
            let max = diag.iter().cloned().fold(0.0, f64::max);
            let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            (max / min).powi(2)
        }
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::matrix::norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let x = solve_linear(&Matrix::identity(2), &[3.0, -1.0]).unwrap();
        assert_eq!(x, vec![3.0, -1.0]);
    }

    #[test]
    fn diagonal_solve() {
        let x = solve_linear(&Matrix::diag(&[2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert_eq!(x, vec![1.0, 1.0]);
    }

    #[test]
    fn random_well_conditioned_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = Matrix::from_fn(6, 6, |r, c| {
                rng.random_range(-1.0..1.0) + if r == c { 4.0 } else { 0.0 }
            });
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x = solve_linear(&a, &b).unwrap();
            let ax = a.matvec(&x).unwrap();
            let res: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(norm(&res) <= 1e-8 * (1.0 + norm(&b)));
        }
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        match solve_linear(&a, &[1.0, 1.0]) {
            Err(Error::Singular { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(solve_linear(&a, &[2.0, 3.0]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn condition_estimate_of_diagonal() {
        let c = spd_condition_estimate(&Matrix::diag(&[1.0, 100.0]));
        assert!((c - 100.0).abs() < 1e-9);
        assert!(spd_condition_estimate(&Matrix::diag(&[1.0, 0.0])).is_infinite());
    }
}
