use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use romelab_core::dataset::WorldModel;
use romelab_core::editor::select_edit_layer;
use romelab_core::model::Checkpoint;
use romelab_core::tracing::{average_grids, select_known_prompts, trace_grid, AveragedGrid, TokenRole, TraceConfig, TraceSite};

use crate::artifact::Workspace;
use crate::config::TraceSettings;
use crate::error::{CliError, Result};

/// Layers the editors act on, with the single-layer traces behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub checkpoint_sha256: String,
    pub trace: TraceSettings,
    /// Rank-one edit and MLP fine-tuning layer.
    pub edit_layer: usize,
    /// Attention fine-tuning layer.
    pub attn_layer: usize,
    /// Single-layer MLP restoration effects at the last subject token.
    pub mlp_effects: Vec<f64>,
    /// Single-layer attention restoration effects at the last token.
    pub attn_effects: Vec<f64>,
}

fn single_layer_trace(ws: &Workspace, world: &WorldModel, ckpt: &Checkpoint, site: TraceSite) -> Result<AveragedGrid> {
    let (params, config) = (&ckpt.parameters, &ckpt.config);
    let known = select_known_prompts(params, config, world, ws.config.trace.n_prompts)?;
    if known.prompts.is_empty() {
        return Err(CliError::NoKnownPrompts);
    }
    let tc = TraceConfig {
        site,
        window_width: 1,
        ..ws.config.trace.trace_config(params)
    };
    let grids = known
        .prompts
        .par_iter()
        .map(|p| trace_grid(params, config, p, &tc))
        .collect::<romelab_core::Result<Vec<_>>>()?;
    Ok(average_grids(&grids)?)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Edit layers from single-layer traces of the checkpoint, cached in the
/// layers file and recomputed when the checkpoint or trace settings
/// change. Configured layers take precedence over traced ones.
pub fn resolve_layers(ws: &Workspace, world: &WorldModel, ckpt: &Checkpoint, checkpoint_sha256: &str) -> Result<LayerChoice> {
    let path = &ws.config.paths.layers;
    let cached = ws
        .read::<LayerChoice>(path, "edit")
        .ok()
        .filter(|c| c.checkpoint_sha256 == checkpoint_sha256 && c.trace == ws.config.trace);
    let mut choice = match cached {
        Some(c) => c,
        None => {
            let mlp = single_layer_trace(ws, world, ckpt, TraceSite::Mlp)?;
            let attn = single_layer_trace(ws, world, ckpt, TraceSite::Attn)?;
            let attn_effects = attn
                .row(TokenRole::LastToken)
                .ok_or(romelab_core::Error::Empty("last-token trace row"))?
                .to_vec();
            let choice = LayerChoice {
                checkpoint_sha256: checkpoint_sha256.to_string(),
                trace: ws.config.trace.clone(),
                edit_layer: select_edit_layer(&mlp)?,
                attn_layer: argmax(&attn_effects),
                mlp_effects: mlp.row(TokenRole::LastSubject).map(<[f64]>::to_vec).unwrap_or_default(),
                attn_effects,
            };
            ws.write(path, &choice)?;
            log::info!("layers: edit {} attention {}", choice.edit_layer, choice.attn_layer);
            choice
        }
    };
    let b = &ws.config.baselines;
    for (slot, fixed) in [(&mut choice.edit_layer, b.edit_layer), (&mut choice.attn_layer, b.attn_layer)] {
        if let Some(l) = fixed {
            if l >= ckpt.config.n_layers {
                return Err(CliError::Config(format!("layer {l} outside a {}-layer model", ckpt.config.n_layers)));
            }
            *slot = l;
        }
    }
    Ok(choice)
}
