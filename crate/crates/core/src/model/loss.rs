use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::Matrix;

use super::backward::backward;
use super::config::ModelConfig;
use super::forward::{forward, forward_with, ForwardTrace, Readout};
use super::intervention::{InterventionSet, Patch, Site};
use super::ops::log_softmax;
use super::params::{ParamSelector, Parameters, TensorId};

/// A scalar objective over the output distributions of one forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    /// `−Σ log P[target | prefix up to position]` over `(position, target)`
    /// terms (teacher forcing for multi-token targets).
    TargetNll { terms: Vec<(usize, usize)> },
    /// `KL(patched ‖ reference)` at one position, with the reference given
    /// as a probability vector.
    Kl { position: usize, reference: Vec<f64> },
}

impl LossSpec {
    pub fn positions(&self) -> Vec<usize> {
        match self {
            LossSpec::TargetNll { terms } => {
                let mut p: Vec<usize> = terms.iter().map(|t| t.0).collect();
                p.sort_unstable();
                p.dedup();
                p
            }
            LossSpec::Kl { position, .. } => vec![*position],
        }
    }

    /// Loss value and `∂loss/∂logits` for the readout rows of `trace`.
    pub fn evaluate(&self, trace: &ForwardTrace) -> Result<(f64, Matrix)> {
        let rows = trace.readout_positions.len();
        let vocab = trace.logits.cols();
        let mut dlogits = Matrix::zeros(rows, vocab);
        let row_of = |pos: usize| {
            trace
                .readout_positions
                .iter()
                .position(|&p| p == pos)
                .ok_or(Error::Bounds {
                    what: "loss position",
                    index: pos,
                    limit: trace.tokens.len(),
                })
        };
        match self {
            LossSpec::TargetNll { terms } => {
                let mut loss = 0.0;
                for &(pos, target) in terms {
                    let r = row_of(pos)?;
                    if target >= vocab {
                        return Err(Error::Bounds {
                            what: "target token",
                            index: target,
                            limit: vocab,
                        });
                    }
                    let logp = log_softmax(trace.logits.row(r));
                    loss -= logp[target];
                    let probs = trace.probs.row(r).to_vec();
                    let d = dlogits.row_mut(r);
                    for (dst, p) in d.iter_mut().zip(&probs) {
                        *dst += p;
                    }
                    d[target] -= 1.0;
                }
                Ok((loss, dlogits))
            }
            LossSpec::Kl { position, reference } => {
                check_dim("KL reference", vocab, reference.len())?;
                let r = row_of(*position)?;
                let probs = trace.probs.row(r).to_vec();
                let kl = kl_divergence(&probs, reference);
                let d = dlogits.row_mut(r);
                for (j, dst) in d.iter_mut().enumerate() {
                    let p = probs[j];
                    let log_ratio = if p > 0.0 { p.ln() - safe_ln(reference[j]) } else { 0.0 };
                    *dst = p * (log_ratio - kl);
                }
                Ok((kl, dlogits))
            }
        }
    }
}

fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::MIN_POSITIVE.ln()
    }
}

/// `KL(p ‖ r)` with `p` given as log-probabilities.
pub fn kl_from_log(logp: &[f64], reference: &[f64]) -> f64 {
    logp.iter()
        .zip(reference)
        .map(|(lp, r)| {
            let p = lp.exp();
            if p > 0.0 {
                p * (lp - safe_ln(*r))
            } else {
                0.0
            }
        })
        .sum()
}

/// `KL(p ‖ r)` for probability vectors.
pub fn kl_divergence(p: &[f64], r: &[f64]) -> f64 {
    p.iter()
        .zip(r)
        .map(|(pi, ri)| if *pi > 0.0 { pi * (pi.ln() - safe_ln(*ri)) } else { 0.0 })
        .sum()
}

/// An MLP output position `m⁽ˡ⁾_token`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationSite {
    pub layer: usize,
    pub token: usize,
}

/// Loss and `∂loss/∂z` where `z` is substituted as the MLP output at
/// `site`. With `z = None` the model's own value at the site is used.
pub fn grad_wrt_activation(
    params: &Parameters,
    config: &ModelConfig,
    tokens: &[usize],
    site: ActivationSite,
    z: Option<&[f64]>,
    loss: &LossSpec,
) -> Result<(f64, Vec<f64>)> {
    if site.layer >= config.n_layers {
        return Err(Error::Bounds {
            what: "site layer",
            index: site.layer,
            limit: config.n_layers,
        });
    }
    if site.token >= tokens.len() {
        return Err(Error::Bounds {
            what: "site token",
            index: site.token,
            limit: tokens.len(),
        });
    }
    let payload = match z {
        Some(z) => z.to_vec(),
        None => forward_with(params, config, tokens, &InterventionSet::new(), Readout::Last)?.mlp_out[site.layer]
            .row(site.token)
            .to_vec(),
    };
    let patches = InterventionSet::new().with(Patch::new(Site::MlpOut, site.token, site.layer, payload));
    let trace = forward_with(params, config, tokens, &patches, Readout::Positions(loss.positions()))?;
    let (value, dlogits) = loss.evaluate(&trace)?;
    let grads = backward(params, config, &trace, &dlogits, false)?;
    Ok((value, grads.patches.into_iter().next().expect("one patch")))
}

/// Sum of next-token negative log-likelihoods of one sequence, with the
/// matching `∂/∂logits`.
fn sequence_nll(trace: &ForwardTrace) -> (f64, Matrix) {
    let n = trace.tokens.len();
    let mut dlogits = Matrix::zeros(n, trace.logits.cols());
    let mut loss = 0.0;
    for i in 0..n.saturating_sub(1) {
        let target = trace.tokens[i + 1];
        loss -= trace.probs.row(i)[target].max(f64::MIN_POSITIVE).ln();
        let d = dlogits.row_mut(i);
        d.copy_from_slice(trace.probs.row(i));
        d[target] -= 1.0;
    }
    (loss, dlogits)
}

/// Mean next-token NLL over a batch and its gradient for all parameters
/// (parameter-shaped).
pub fn batch_loss_and_grad(params: &Parameters, config: &ModelConfig, batch: &[Vec<usize>]) -> Result<(f64, Parameters)> {
    let count: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    if count == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut total = Parameters::zeros(config);
    let mut loss = 0.0;
    let scale = 1.0 / count as f64;
    for seq in batch {
        if seq.len() < 2 {
            continue;
        }
        let trace = forward(params, config, seq, &InterventionSet::new())?;
        let (l, mut dlogits) = sequence_nll(&trace);
        loss += l;
        dlogits.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        let g = backward(params, config, &trace, &dlogits, true)?
            .params
            .expect("requested parameter gradients");
        for id in total.tensor_ids() {
            let dst = total.tensor_mut(id)?;
            for (d, s) in dst.iter_mut().zip(g.tensor(id)?) {
                *d += s;
            }
        }
    }
    Ok((loss * scale, total))
}

/// Mean next-token NLL over a batch.
pub fn batch_loss(params: &Parameters, config: &ModelConfig, batch: &[Vec<usize>]) -> Result<f64> {
    let count: usize = batch.iter().map(|s| s.len().saturating_sub(1)).sum();
    if count == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut loss = 0.0;
    for seq in batch.iter().filter(|s| s.len() >= 2) {
        let trace = forward(params, config, seq, &InterventionSet::new())?;
        loss += sequence_nll(&trace).0;
    }
    Ok(loss / count as f64)
}

/// Gradient of one selected tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrad {
    pub id: TensorId,
    pub values: Vec<f64>,
}

/// Mean batch NLL and its exact gradient restricted to `selector`.
pub fn grad_wrt_params(
    params: &Parameters,
    config: &ModelConfig,
    batch: &[Vec<usize>],
    selector: &ParamSelector,
) -> Result<(f64, Vec<TensorGrad>)> {
    let (loss, full) = batch_loss_and_grad(params, config, batch)?;
    let grads = selector
        .0
        .iter()
        .map(|&id| {
            Ok(TensorGrad {
                id,
                values: full.tensor(id)?.to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    Ok((loss, grads))
}

/// Loss and selected-tensor gradients for an arbitrary [`LossSpec`] on one
/// unpatched sequence.
pub fn loss_grad_for_spec(
    params: &Parameters,
    config: &ModelConfig,
    tokens: &[usize],
    loss: &LossSpec,
    selector: &ParamSelector,
) -> Result<(f64, Vec<TensorGrad>)> {
    let trace = forward_with(
        params,
        config,
        tokens,
        &InterventionSet::new(),
        Readout::Positions(loss.positions()),
    )?;
    let (value, dlogits) = loss.evaluate(&trace)?;
    let g = backward(params, config, &trace, &dlogits, !selector.is_empty())?;
    let grads = match g.params {
        Some(full) => selector
            .0
            .iter()
            .map(|&id| {
                Ok(TensorGrad {
                    id,
                    values: full.tensor(id)?.to_vec(),
                })
            })
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };
    Ok((value, grads))
}
