use crate::error::{Error, Result};
use crate::numerics::{gemm, Matrix, Trans};

use super::config::{ModelConfig, Wiring};
use super::intervention::{InterventionSet, Site};
use super::ops::{gelu, layer_norm, softmax, NormCache};
use super::params::{LayerParams, Parameters};

/// Which positions get a readout (logits and output distribution).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Readout {
    All,
    Last,
    Positions(Vec<usize>),
}

/// Internal activations of one block, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub ln1: NormCache,
    pub ln1_out: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// Per head, row-stochastic `n×n` attention weights (lower triangular).
    pub attn_probs: Vec<Matrix>,
    pub context: Matrix,
    pub ln2: NormCache,
    pub ln2_out: Matrix,
    pub mlp_pre: Matrix,
}

/// Every state of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    /// `residual[0]` is the embedding `h⁽⁰⁾`; `residual[l + 1]` is the output
    /// of block `l`.
    pub residual: Vec<Matrix>,
    /// Attention outputs `a⁽ˡ⁾`, one `n×H` matrix per block.
    pub attn_out: Vec<Matrix>,
    /// MLP outputs `m⁽ˡ⁾`.
    pub mlp_out: Vec<Matrix>,
    /// Post-nonlinearity MLP activations `k⁽ˡ⁾`, `n×D`.
    pub mlp_key: Vec<Matrix>,
    pub readout_positions: Vec<usize>,
    /// Logits, one row per readout position.
    pub logits: Matrix,
    /// Output distributions, one row per readout position.
    pub probs: Matrix,
    pub(crate) interventions: InterventionSet,
    pub(crate) caches: Vec<LayerCache>,
    pub(crate) final_norm: NormCache,
    pub(crate) final_out: Matrix,
    pub(crate) first_layer: usize,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Output `h⁽ˡ⁾` of block `layer` (0-based) at every token.
    pub fn hidden(&self, layer: usize) -> &Matrix {
        &self.residual[layer + 1]
    }

    pub fn interventions(&self) -> &InterventionSet {
        &self.interventions
    }

    /// Output distribution at `position`: `softmax(W_eᵀ γ(h⁽ᴸ⁾_position))`.
    pub fn output_distribution(&self, position: usize) -> Result<&[f64]> {
        self.readout_positions
            .iter()
            .position(|&p| p == position)
            .map(|row| self.probs.row(row))
            .ok_or(Error::Bounds {
                what: "readout position",
                index: position,
                limit: self.tokens.len(),
            })
    }

    pub fn last_distribution(&self) -> &[f64] {
        self.output_distribution(self.tokens.len() - 1)
            .expect("last position is always read out")
    }
}

/// Full forward pass with readout at every position.
pub fn forward(params: &Parameters, config: &ModelConfig, tokens: &[usize], interventions: &InterventionSet) -> Result<ForwardTrace> {
    forward_with(params, config, tokens, interventions, Readout::All)
}

/// Full forward pass with a chosen set of readout positions.
pub fn forward_with(
    params: &Parameters,
    config: &ModelConfig,
    tokens: &[usize],
    interventions: &InterventionSet,
    readout: Readout,
) -> Result<ForwardTrace> {
    validate_tokens(config, tokens)?;
    interventions.validate(config, tokens.len())?;
    let h0 = embed(params, tokens, interventions);
    run(params, config, tokens, 0, h0, interventions, readout, true)
}

/// Output distribution at the last position of a run that matches
/// `reference` up to the input of block `start_layer`, with `interventions`
/// (all at layers `>= start_layer`) applied from there on.
pub(crate) fn resume_last_distribution(
    params: &Parameters,
    config: &ModelConfig,
    reference: &ForwardTrace,
    start_layer: usize,
    interventions: &InterventionSet,
) -> Result<Vec<f64>> {
    interventions.validate(config, reference.tokens.len())?;
    debug_assert!(interventions.min_layer().map_or(true, |l| l >= start_layer));
    debug_assert!(start_layer >= reference.first_layer);
    let h = reference.residual[start_layer - reference.first_layer].clone();
    let trace = run(
        params,
        config,
        &reference.tokens,
        start_layer,
        h,
        interventions,
        Readout::Last,
        false,
    )?;
    Ok(trace.probs.row(0).to_vec())
}

fn validate_tokens(config: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if tokens.len() > config.max_context {
        return Err(Error::Bounds {
            what: "sequence length",
            index: tokens.len(),
            limit: config.max_context,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= config.vocab_size) {
        return Err(Error::Bounds {
            what: "token id",
            index: bad,
            limit: config.vocab_size,
        });
    }
    Ok(())
}

fn embed(params: &Parameters, tokens: &[usize], interventions: &InterventionSet) -> Matrix {
    let h = params.token_embedding.cols();
    let mut h0 = Matrix::zeros(tokens.len(), h);
    for (i, &t) in tokens.iter().enumerate() {
        let row = h0.row_mut(i);
        for ((dst, e), p) in row
            .iter_mut()
            .zip(params.token_embedding.row(t))
            .zip(params.position_embedding.row(i))
        {
            *dst = e + p;
        }
    }
    for idx in interventions.indices_at(Site::EmbeddingNoise, 0) {
        let p = &interventions.patches()[idx];
        for (dst, noise) in h0.row_mut(p.token).iter_mut().zip(&p.payload) {
            *dst += noise;
        }
    }
    h0
}

fn replace_rows(target: &mut Matrix, interventions: &InterventionSet, site: Site, layer: usize) {
    for idx in interventions.indices_at(site, layer) {
        let p = &interventions.patches()[idx];
        target.row_mut(p.token).copy_from_slice(&p.payload);
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    params: &Parameters,
    config: &ModelConfig,
    tokens: &[usize],
    first_layer: usize,
    mut h: Matrix,
    interventions: &InterventionSet,
    readout: Readout,
    keep_cache: bool,
) -> Result<ForwardTrace> {
    let n = tokens.len();
    let n_blocks = config.n_layers - first_layer;
    let mut residual = Vec::with_capacity(n_blocks + 1);
    let mut attn_outs = Vec::with_capacity(n_blocks);
    let mut mlp_outs = Vec::with_capacity(n_blocks);
    let mut mlp_keys = Vec::with_capacity(n_blocks);
    let mut caches = Vec::with_capacity(if keep_cache { n_blocks } else { 0 });

    for layer in first_layer..config.n_layers {
        let lp = &params.layers[layer];
        let (mut attn, attn_cache) = attention(lp, config, &h);
        replace_rows(&mut attn, interventions, Site::AttnOut, layer);

        let mlp_in = match config.wiring {
            Wiring::Serial => h.add(&attn)?,
            Wiring::Parallel => h.clone(),
        };
        let (ln2_out, ln2) = layer_norm(&mlp_in, &lp.ln2_gain, &lp.ln2_bias);
        let mut pre = Matrix::zeros(n, config.mlp_dim);
        gemm(1.0, &ln2_out, Trans::No, &lp.mlp_fc, Trans::Yes, 0.0, &mut pre);
        let mut key = pre.clone();
        key.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
        let mut mlp = Matrix::zeros(n, config.hidden);
        gemm(1.0, &key, Trans::No, &lp.mlp_proj, Trans::Yes, 0.0, &mut mlp);
        replace_rows(&mut mlp, interventions, Site::MlpFreeze, layer);
        replace_rows(&mut mlp, interventions, Site::MlpOut, layer);

        let mut next = h.clone();
        for ((dst, a), m) in next
            .as_mut_slice()
            .iter_mut()
            .zip(attn.as_slice())
            .zip(mlp.as_slice())
        {
            *dst += a + m;
        }
        replace_rows(&mut next, interventions, Site::Hidden, layer);

        residual.push(std::mem::replace(&mut h, next));
        if keep_cache {
            let (ln1, ln1_out, query, key_m, value, attn_probs, context) = attn_cache;
            caches.push(LayerCache {
                ln1,
                ln1_out,
                query,
                key: key_m,
                value,
                attn_probs,
                context,
                ln2,
                ln2_out,
                mlp_pre: pre,
            });
        }
        attn_outs.push(attn);
        mlp_outs.push(mlp);
        mlp_keys.push(key);
    }

    let positions = match readout {
        Readout::All => (0..n).collect(),
        Readout::Last => vec![n - 1],
        Readout::Positions(p) => {
            if let Some(&bad) = p.iter().find(|&&i| i >= n) {
                return Err(Error::Bounds {
                    what: "readout position",
                    index: bad,
                    limit: n,
                });
            }
            p
        }
    };
    let mut final_in = Matrix::zeros(positions.len(), config.hidden);
    for (r, &p) in positions.iter().enumerate() {
        final_in.row_mut(r).copy_from_slice(h.row(p));
    }
    let (final_out, final_norm) = layer_norm(&final_in, &params.final_gain, &params.final_bias);
    let readout_m = params.readout();
    let mut logits = Matrix::zeros(positions.len(), config.vocab_size);
    gemm(1.0, &final_out, Trans::No, readout_m, Trans::Yes, 0.0, &mut logits);
    let mut probs = Matrix::zeros(positions.len(), config.vocab_size);
    for r in 0..positions.len() {
        let p = softmax(logits.row(r));
        probs.row_mut(r).copy_from_slice(&p);
    }
    residual.push(h);

    Ok(ForwardTrace {
        tokens: tokens.to_vec(),
        residual,
        attn_out: attn_outs,
        mlp_out: mlp_outs,
        mlp_key: mlp_keys,
        readout_positions: positions,
        logits,
        probs,
        interventions: interventions.clone(),
        caches,
        final_norm,
        final_out,
        first_layer,
    })
}

type AttentionCache = (NormCache, Matrix, Matrix, Matrix, Matrix, Vec<Matrix>, Matrix);

fn attention(lp: &LayerParams, config: &ModelConfig, h: &Matrix) -> (Matrix, AttentionCache) {
    let (n, hidden) = h.shape();
    let (ln1_out, ln1) = layer_norm(h, &lp.ln1_gain, &lp.ln1_bias);
    let project = |w: &Matrix| {
        let mut out = Matrix::zeros(n, hidden);
        gemm(1.0, &ln1_out, Trans::No, w, Trans::Yes, 0.0, &mut out);
        out
    };
    let query = project(&lp.attn_query);
    let key = project(&lp.attn_key);
    let value = project(&lp.attn_value);

    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Matrix::zeros(n, hidden);
    let mut all_probs = Vec::with_capacity(config.n_heads);
    for head in 0..config.n_heads {
        let cols = head * dh..(head + 1) * dh;
        let mut probs = Matrix::zeros(n, n);
        for i in 0..n {
            let qi = &query.row(i)[cols.clone()];
            let scores: Vec<f64> = (0..=i)
                .map(|j| crate::numerics::dot(qi, &key.row(j)[cols.clone()]) * scale)
                .collect();
            let p = softmax(&scores);
            probs.row_mut(i)[..=i].copy_from_slice(&p);
            let ctx = &mut context.row_mut(i)[cols.clone()];
            for (j, pj) in p.iter().enumerate() {
                for (c, v) in ctx.iter_mut().zip(&value.row(j)[cols.clone()]) {
                    *c += pj * v;
                }
            }
        }
        all_probs.push(probs);
    }
    let mut out = Matrix::zeros(n, hidden);
    gemm(1.0, &context, Trans::No, &lp.attn_out, Trans::Yes, 0.0, &mut out);
    (out, (ln1, ln1_out, query, key, value, all_probs, context))
}
