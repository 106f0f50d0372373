use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_with, InterventionSet, ModelConfig, Parameters, Readout};
use crate::numerics::{constraint_residual, dot, insertion_direction, norm, rank_one_update, CovarianceAccumulator, Matrix};
use crate::tracing::{AveragedGrid, TokenRole};

use super::key::compute_k_star;
use super::value::{optimize_v_star, VStarConfig};
use super::EncodedRequest;

/// Everything recorded about one rank-one edit. The weight change is
/// `v uᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub layer: usize,
    pub k_star: Vec<f64>,
    /// Value inserted at `k*`.
    pub v_star: Vec<f64>,
    /// Optimized MLP output at the rewrite prompt's last subject token.
    pub z_star: Vec<f64>,
    /// Left factor of the update (the constraint's Lagrange multiplier).
    pub v: Vec<f64>,
    /// Right factor `C⁻¹ k*`.
    pub u: Vec<f64>,
    pub loss_trajectory: Vec<f64>,
    pub pre_p_true: f64,
    pub pre_p_new: f64,
    pub post_p_true: f64,
    pub post_p_new: f64,
    /// `‖Ŵ k* − v*‖ / (1 + ‖v*‖)`.
    pub constraint_residual: f64,
    pub delta_frobenius: f64,
    pub weight_frobenius: f64,
}

/// Raw second moments `Σ k kᵀ` of the MLP keys at each of `layers`, over
/// every token of every sequence. Sequences longer than the context are
/// split into context-sized pieces.
pub fn collect_key_statistics(
    params: &Parameters,
    config: &ModelConfig,
    sequences: &[Vec<usize>],
    layers: &[usize],
) -> Result<Vec<CovarianceAccumulator>> {
    if let Some(&bad) = layers.iter().find(|&&l| l >= config.n_layers) {
        return Err(Error::Bounds {
            what: "statistics layer",
            index: bad,
            limit: config.n_layers,
        });
    }
    let mut acc: Vec<CovarianceAccumulator> = layers.iter().map(|_| CovarianceAccumulator::new(config.mlp_dim)).collect();
    for seq in sequences {
        for piece in seq.chunks(config.max_context) {
            let trace = forward_with(params, config, piece, &InterventionSet::new(), Readout::Last)?;
            for (a, &l) in acc.iter_mut().zip(layers) {
                a.accumulate_rows(&trace.mlp_key[l])?;
            }
        }
    }
    Ok(acc)
}

/// Inserts `(k*, v*)` into the MLP projection of `request.layer` with the
/// closed-form rank-one update against key statistics `c`. Only that
/// projection changes.
pub fn apply_rome(
    params: &Parameters,
    config: &ModelConfig,
    request: &EncodedRequest,
    k_star: &[f64],
    v_star: &[f64],
    c: &Matrix,
) -> Result<(Parameters, EditResult)> {
    let layer = request.layer;
    if layer >= config.n_layers {
        return Err(Error::Bounds {
            what: "edit layer",
            index: layer,
            limit: config.n_layers,
        });
    }
    let (pre_p_true, pre_p_new) = request.probabilities(params, config)?;
    let w = &params.layers[layer].mlp_proj;
    let update = rank_one_update(w, c, k_star, v_star)?;
    let residual = constraint_residual(&update.w_hat, k_star, v_star)?;
    let weight_frobenius = w.frobenius_norm();
    let delta_frobenius = norm(&update.v) * norm(&update.u);

    let mut edited = params.clone();
    edited.layers[layer].mlp_proj = update.w_hat;
    let (post_p_true, post_p_new) = request.probabilities(&edited, config)?;
    Ok((
        edited,
        EditResult {
            layer,
            k_star: k_star.to_vec(),
            v_star: v_star.to_vec(),
            z_star: v_star.to_vec(),
            v: update.v,
            u: update.u,
            loss_trajectory: Vec::new(),
            pre_p_true,
            pre_p_new,
            post_p_true,
            post_p_new,
            constraint_residual: residual,
            delta_frobenius,
            weight_frobenius,
        },
    ))
}

/// Settings of the full rank-one edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RomeConfig {
    pub v_star: VStarConfig,
    /// Insert the value that makes the edited MLP produce the optimized
    /// output at the rewrite prompt's own key (see [`realized_value`]),
    /// instead of inserting the optimized output itself at `k*`.
    pub realize_in_prompt: bool,
}

impl Default for RomeConfig {
    fn default() -> Self {
        Self {
            v_star: VStarConfig::default(),
            realize_in_prompt: true,
        }
    }
}

/// Smallest accepted `uᵀk_p / uᵀk*` in [`realized_value`].
pub const MIN_KEY_RESPONSE: f64 = 1e-3;

/// Value `v` to insert at `k*` so that the edited projection maps the key
/// `k_prompt` to `z`.
///
/// An insertion `Ŵ = W + (v − W k*) uᵀ / (uᵀk*)` moves the output at any
/// key `k` by `(v − W k*) · uᵀk / uᵀk*`. Solving for an output of `z` at
/// `k_prompt` gives `v = W k* + (z − W k_prompt) · uᵀk* / uᵀk_prompt`.
pub fn realized_value(w: &Matrix, c: &Matrix, k_star: &[f64], k_prompt: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let (u, denom) = insertion_direction(c, k_star)?;
    let response = dot(&u, k_prompt) / denom;
    if !(response.abs() >= MIN_KEY_RESPONSE) {
        return Err(Error::DegenerateKey(response));
    }
    let at_star = w.matvec(k_star)?;
    let at_prompt = w.matvec(k_prompt)?;
    Ok(at_star
        .iter()
        .zip(z.iter().zip(&at_prompt))
        .map(|(s, (z, p))| s + (z - p) / response)
        .collect())
}

/// Key from `prefixes`, value by optimization, then the rank-one insertion.
pub fn rome_edit(
    params: &Parameters,
    config: &ModelConfig,
    request: &EncodedRequest,
    prefixes: &[Vec<usize>],
    rome: &RomeConfig,
    c: &Matrix,
) -> Result<(Parameters, EditResult)> {
    let k_star = compute_k_star(params, config, &request.subject, prefixes, request.layer)?;
    let value = optimize_v_star(params, config, request, &rome.v_star)?;
    let v_star = if rome.realize_in_prompt {
        let trace = forward_with(params, config, &request.prompt, &InterventionSet::new(), Readout::Last)?;
        let k_prompt = trace.mlp_key[request.layer].row(request.last_subject);
        realized_value(&params.layers[request.layer].mlp_proj, c, &k_star, k_prompt, &value.v_star)?
    } else {
        value.v_star.clone()
    };
    let (edited, mut result) = apply_rome(params, config, request, &k_star, &v_star, c)?;
    result.z_star = value.v_star;
    result.loss_trajectory = value.trajectory;
    Ok((edited, result))
}

/// Layer whose restoration at the last subject token has the largest
/// averaged effect (the lowest such layer on ties).
pub fn select_edit_layer(grid: &AveragedGrid) -> Result<usize> {
    let row = grid.row(TokenRole::LastSubject).ok_or(Error::Empty("last-subject trace row"))?;
    let mut best = 0;
    for (l, e) in row.iter().enumerate() {
        if *e > row[best] {
            best = l;
        }
    }
    Ok(best)
}
