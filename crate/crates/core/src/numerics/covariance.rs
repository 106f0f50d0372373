use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::matrix::{gemm, Matrix, Trans};
use super::solve::spd_condition_estimate;

/// Condition estimate above which [`auto_ridge`] regularizes.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Ridge applied by [`auto_ridge`], relative to the mean diagonal.
pub const RELATIVE_RIDGE: f64 = 1e-6;

/// Running raw second moment `Σ k kᵀ` of MLP keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceAccumulator {
    dim: usize,
    sum_outer: Matrix,
    n_samples: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            sum_outer: Matrix::zeros(dim, dim),
            n_samples: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sum_outer(&self) -> &Matrix {
        &self.sum_outer
    }

    /// Adds `k kᵀ`. Entry `(i, j)` and `(j, i)` receive the same product in
    /// the same order, so the sum stays exactly symmetric.
    pub fn accumulate(&mut self, k: &[f64]) -> Result<()> {
        check_dim("CovarianceAccumulator::accumulate", self.dim, k.len())?;
        let n = self.dim;
        let data = self.sum_outer.as_mut_slice();
        for i in 0..n {
            let ki = k[i];
            let row = &mut data[i * n..(i + 1) * n];
            for (dst, kj) in row.iter_mut().zip(k) {
                *dst += ki * kj;
            }
        }
        self.n_samples += 1;
        Ok(())
    }

    /// Adds `Σ_rows k kᵀ` for every row of `keys` in one product.
    pub fn accumulate_rows(&mut self, keys: &Matrix) -> Result<()> {
        check_dim("CovarianceAccumulator::accumulate_rows", self.dim, keys.cols())?;
        let n = self.dim;
        let mut gram = Matrix::zeros(n, n);
        gemm(1.0, keys, Trans::Yes, keys, Trans::No, 0.0, &mut gram);
        let data = self.sum_outer.as_mut_slice();
        for i in 0..n {
            for j in i..n {
                data[i * n + j] += gram[(i, j)];
            }
            for j in 0..i {
                data[i * n + j] = data[j * n + i];
            }
        }
        self.n_samples += keys.rows();
        Ok(())
    }

    /// Consuming variant of [`accumulate`](Self::accumulate).
    pub fn with(mut self, k: &[f64]) -> Result<Self> {
        self.accumulate(k)?;
        Ok(self)
    }

    /// Merges another accumulator of the same dimension.
    pub fn merge(&mut self, other: &CovarianceAccumulator) -> Result<()> {
        check_dim("CovarianceAccumulator::merge", self.dim, other.dim)?;
        for (a, b) in self
            .sum_outer
            .as_mut_slice()
            .iter_mut()
            .zip(other.sum_outer.as_slice())
        {
            *a += b;
        }
        self.n_samples += other.n_samples;
        Ok(())
    }

    /// `Σ k kᵀ + ridge · I`.
    pub fn finalize(&self, ridge: f64) -> Result<Matrix> {
        if self.n_samples == 0 {
            return Err(Error::EmptyStatistics);
        }
        if !(ridge >= 0.0) {
            return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
        }
        let mut c = self.sum_outer.clone();
        for i in 0..self.dim {
            c[(i, i)] += ridge;
        }
        Ok(c)
    }
}

/// Adds `RELATIVE_RIDGE · mean(diag C)` to the diagonal when the condition
/// estimate of `C` exceeds [`CONDITION_LIMIT`]; otherwise returns `C` as is.
/// Returns the ridge that was applied.
pub fn auto_ridge(c: &Matrix) -> (Matrix, f64) {
    if spd_condition_estimate(c) <= CONDITION_LIMIT {
        return (c.clone(), 0.0);
    }
    let n = c.rows().max(1);
    let mean_diag = c.trace() / n as f64;
    let ridge = RELATIVE_RIDGE * mean_diag.max(f64::MIN_POSITIVE);
    let mut out = c.clone();
    for i in 0..c.rows() {
        out[(i, i)] += ridge;
    }
    (out, ridge)
}

/// On-disk covariance statistics for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceCache {
    pub layer: usize,
    pub dim: usize,
    pub n_samples: usize,
    pub sum_outer: Matrix,
}

impl CovarianceCache {
    pub fn from_accumulator(layer: usize, acc: &CovarianceAccumulator) -> Self {
        Self {
            layer,
            dim: acc.dim,
            n_samples: acc.n_samples,
            sum_outer: acc.sum_outer.clone(),
        }
    }

    pub fn into_accumulator(self) -> Result<CovarianceAccumulator> {
        check_dim("CovarianceCache rows", self.dim, self.sum_outer.rows())?;
        check_dim("CovarianceCache cols", self.dim, self.sum_outer.cols())?;
        Ok(CovarianceAccumulator {
            dim: self.dim,
            sum_outer: self.sum_outer,
            n_samples: self.n_samples,
        })
    }
}
