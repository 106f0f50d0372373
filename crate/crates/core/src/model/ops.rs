//! Elementwise kernels shared by the forward and backward passes.

use crate::numerics::Matrix;

use super::config::ModelConfig;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Normalized rows and inverse standard deviations kept for backward.
#[derive(Debug, Clone)]
pub(crate) struct NormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Row-wise layer norm `y = g ⊙ (x − μ)/σ + b`.
pub(crate) fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, NormCache) {
    let (n, h) = x.shape();
    let mut normalized = Matrix::zeros(n, h);
    let mut out = Matrix::zeros(n, h);
    let mut inv_std = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let is = 1.0 / (var + ModelConfig::LAYER_NORM_EPS).sqrt();
        inv_std.push(is);
        let xn = normalized.row_mut(r);
        for (dst, v) in xn.iter_mut().zip(row) {
            *dst = (v - mean) * is;
        }
        let xn = normalized.row(r).to_vec();
        for (j, dst) in out.row_mut(r).iter_mut().enumerate() {
            *dst = gain[j] * xn[j] + bias[j];
        }
    }
    (out, NormCache { normalized, inv_std })
}

/// Backward of [`layer_norm`]; accumulates parameter gradients when given.
pub(crate) fn layer_norm_backward(
    dy: &Matrix,
    gain: &[f64],
    cache: &NormCache,
    mut dgain: Option<&mut [f64]>,
    mut dbias: Option<&mut [f64]>,
) -> Matrix {
    let (n, h) = dy.shape();
    let mut dx = Matrix::zeros(n, h);
    let mut dxhat = vec![0.0; h];
    for r in 0..n {
        let dyr = dy.row(r);
        let xn = cache.normalized.row(r);
        if let Some(dg) = dgain.as_deref_mut() {
            for j in 0..h {
                dg[j] += dyr[j] * xn[j];
            }
        }
        if let Some(db) = dbias.as_deref_mut() {
            for j in 0..h {
                db[j] += dyr[j];
            }
        }
        for j in 0..h {
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / h as f64;
        let mean_dx = dxhat.iter().zip(xn).map(|(a, b)| a * b).sum::<f64>() / h as f64;
        let is = cache.inv_std[r];
        for (j, dst) in dx.row_mut(r).iter_mut().enumerate() {
            *dst = is * (dxhat[j] - mean_d - xn[j] * mean_dx);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn log_softmax_is_log_of_softmax() {
        let z = [1.0, -2.0, 0.5, 7.0];
        for (a, b) in log_softmax(&z).iter().zip(softmax(&z)) {
            assert!((a - b.ln()).abs() < 1e-12);
        }
    }
}
