//! Reverse-mode differentiation of [`forward`](super::forward::forward).
//!
//! Patched activations cut the graph: the gradient arriving at a replaced
//! row is reported as the gradient of that patch's payload and does not flow
//! into the computation the patch overrode.

use crate::error::{check_dim, Error, Result};
use crate::numerics::{gemm, Matrix, Trans};

use super::config::{ModelConfig, Wiring};
use super::forward::ForwardTrace;
use super::intervention::Site;
use super::ops::{gelu_grad, layer_norm_backward};
use super::params::Parameters;

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Parameter-shaped gradients, when requested.
    pub params: Option<Parameters>,
    /// Gradient with respect to each patch payload, aligned with
    /// `trace.interventions().patches()`.
    pub patches: Vec<Vec<f64>>,
}

/// Backpropagates `dlogits` (one row per readout position of `trace`).
pub fn backward(
    params: &Parameters,
    config: &ModelConfig,
    trace: &ForwardTrace,
    dlogits: &Matrix,
    want_params: bool,
) -> Result<Gradients> {
    if trace.first_layer != 0 || trace.caches.len() != config.n_layers {
        return Err(Error::Config("backward needs a full forward trace with caches".into()));
    }
    check_dim("dlogits rows", trace.readout_positions.len(), dlogits.rows())?;
    check_dim("dlogits cols", config.vocab_size, dlogits.cols())?;

    let n = trace.tokens.len();
    let hdim = config.hidden;
    let patches = trace.interventions.patches();
    let mut patch_grads: Vec<Vec<f64>> = patches.iter().map(|p| vec![0.0; p.payload.len()]).collect();
    let mut grads = want_params.then(|| Parameters::zeros(config));

    // Readout and final layer norm.
    let readout = params.readout();
    let mut dfinal = Matrix::zeros(dlogits.rows(), hdim);
    gemm(1.0, dlogits, Trans::No, readout, Trans::No, 0.0, &mut dfinal);
    let mut dh = Matrix::zeros(n, hdim);
    {
        let (dgain, dbias, dread) = match grads.as_mut() {
            Some(g) => {
                let Parameters {
                    final_gain,
                    final_bias,
                    token_embedding,
                    unembedding,
                    ..
                } = g;
                let dread = match unembedding.as_mut() {
                    Some(u) => u,
                    None => token_embedding,
                };
                (Some(final_gain.as_mut_slice()), Some(final_bias.as_mut_slice()), Some(dread))
            }
            None => (None, None, None),
        };
        if let Some(dread) = dread {
            gemm(1.0, dlogits, Trans::Yes, &trace.final_out, Trans::No, 1.0, dread);
        }
        let dfinal_in = layer_norm_backward(&dfinal, &params.final_gain, &trace.final_norm, dgain, dbias);
        for (r, &pos) in trace.readout_positions.iter().enumerate() {
            for (dst, v) in dh.row_mut(pos).iter_mut().zip(dfinal_in.row(r)) {
                *dst += v;
            }
        }
    }

    for layer in (0..config.n_layers).rev() {
        let lp = &params.layers[layer];
        let cache = &trace.caches[layer];

        for idx in trace.interventions.indices_at(Site::Hidden, layer) {
            let row = patches[idx].token;
            patch_grads[idx].copy_from_slice(dh.row(row));
            dh.row_mut(row).iter_mut().for_each(|v| *v = 0.0);
        }

        let mut dh_in = dh.clone();
        let mut da = dh.clone();
        let mut dm = dh;

        // MLP.
        let out_rows: Vec<usize> = trace.interventions.indices_at(Site::MlpOut, layer).collect();
        for idx in &out_rows {
            let row = patches[*idx].token;
            patch_grads[*idx].copy_from_slice(dm.row(row));
        }
        for idx in trace.interventions.indices_at(Site::MlpFreeze, layer) {
            let row = patches[idx].token;
            let overridden = out_rows.iter().any(|&o| patches[o].token == row);
            if !overridden {
                patch_grads[idx].copy_from_slice(dm.row(row));
            }
            dm.row_mut(row).iter_mut().for_each(|v| *v = 0.0);
        }
        for idx in &out_rows {
            dm.row_mut(patches[*idx].token).iter_mut().for_each(|v| *v = 0.0);
        }

        let key = &trace.mlp_key[layer];
        let mut dkey = Matrix::zeros(n, config.mlp_dim);
        gemm(1.0, &dm, Trans::No, &lp.mlp_proj, Trans::No, 0.0, &mut dkey);
        let mut dpre = dkey;
        for (d, x) in dpre.as_mut_slice().iter_mut().zip(cache.mlp_pre.as_slice()) {
            *d *= gelu_grad(*x);
        }
        let mut dln2 = Matrix::zeros(n, hdim);
        gemm(1.0, &dpre, Trans::No, &lp.mlp_fc, Trans::No, 0.0, &mut dln2);
        let dmlp_in = {
            let (dg, db) = match grads.as_mut() {
                Some(g) => {
                    let gl = &mut g.layers[layer];
                    gemm(1.0, &dm, Trans::Yes, key, Trans::No, 1.0, &mut gl.mlp_proj);
                    gemm(1.0, &dpre, Trans::Yes, &cache.ln2_out, Trans::No, 1.0, &mut gl.mlp_fc);
                    (Some(gl.ln2_gain.as_mut_slice()), Some(gl.ln2_bias.as_mut_slice()))
                }
                None => (None, None),
            };
            layer_norm_backward(&dln2, &lp.ln2_gain, &cache.ln2, dg, db)
        };
        add_into(&mut dh_in, &dmlp_in);
        if config.wiring == Wiring::Serial {
            add_into(&mut da, &dmlp_in);
        }

        // Attention.
        for idx in trace.interventions.indices_at(Site::AttnOut, layer) {
            let row = patches[idx].token;
            patch_grads[idx].copy_from_slice(da.row(row));
            da.row_mut(row).iter_mut().for_each(|v| *v = 0.0);
        }
        let mut dcontext = Matrix::zeros(n, hdim);
        gemm(1.0, &da, Trans::No, &lp.attn_out, Trans::No, 0.0, &mut dcontext);

        let dhd = config.head_dim();
        let scale = 1.0 / (dhd as f64).sqrt();
        let mut dq = Matrix::zeros(n, hdim);
        let mut dk = Matrix::zeros(n, hdim);
        let mut dv = Matrix::zeros(n, hdim);
        for head in 0..config.n_heads {
            let cols = head * dhd..(head + 1) * dhd;
            let probs = &cache.attn_probs[head];
            for i in 0..n {
                let dci = &dcontext.row(i)[cols.clone()];
                let pi = &probs.row(i)[..=i];
                let dp: Vec<f64> = (0..=i)
                    .map(|j| crate::numerics::dot(dci, &cache.value.row(j)[cols.clone()]))
                    .collect();
                for (j, pij) in pi.iter().enumerate() {
                    let dvj = &mut dv.row_mut(j)[cols.clone()];
                    for (d, c) in dvj.iter_mut().zip(dci) {
                        *d += pij * c;
                    }
                }
                let weighted: f64 = pi.iter().zip(&dp).map(|(p, d)| p * d).sum();
                for j in 0..=i {
                    let ds = pi[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &cache.key.row(j)[cols.clone()];
                    for (d, k) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *d += ds * k;
                    }
                    let qi = &cache.query.row(i)[cols.clone()];
                    for (d, q) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *d += ds * q;
                    }
                }
            }
        }

        let mut dln1 = Matrix::zeros(n, hdim);
        gemm(1.0, &dq, Trans::No, &lp.attn_query, Trans::No, 0.0, &mut dln1);
        gemm(1.0, &dk, Trans::No, &lp.attn_key, Trans::No, 1.0, &mut dln1);
        gemm(1.0, &dv, Trans::No, &lp.attn_value, Trans::No, 1.0, &mut dln1);
        let dattn_in = {
            let (dg, db) = match grads.as_mut() {
                Some(g) => {
                    let gl = &mut g.layers[layer];
                    gemm(1.0, &da, Trans::Yes, &cache.context, Trans::No, 1.0, &mut gl.attn_out);
                    gemm(1.0, &dq, Trans::Yes, &cache.ln1_out, Trans::No, 1.0, &mut gl.attn_query);
                    gemm(1.0, &dk, Trans::Yes, &cache.ln1_out, Trans::No, 1.0, &mut gl.attn_key);
                    gemm(1.0, &dv, Trans::Yes, &cache.ln1_out, Trans::No, 1.0, &mut gl.attn_value);
                    (Some(gl.ln1_gain.as_mut_slice()), Some(gl.ln1_bias.as_mut_slice()))
                }
                None => (None, None),
            };
            layer_norm_backward(&dln1, &lp.ln1_gain, &cache.ln1, dg, db)
        };
        add_into(&mut dh_in, &dattn_in);
        dh = dh_in;
    }

    for idx in trace.interventions.indices_at(Site::EmbeddingNoise, 0) {
        patch_grads[idx].copy_from_slice(dh.row(patches[idx].token));
    }
    if let Some(g) = grads.as_mut() {
        for (i, &t) in trace.tokens.iter().enumerate() {
            for (dst, v) in g.token_embedding.row_mut(t).iter_mut().zip(dh.row(i)) {
                *dst += v;
            }
            for (dst, v) in g.position_embedding.row_mut(i).iter_mut().zip(dh.row(i)) {
                *dst += v;
            }
        }
    }

    Ok(Gradients {
        params: grads,
        patches: patch_grads,
    })
}

fn add_into(dst: &mut Matrix, src: &Matrix) {
    for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s;
    }
}
