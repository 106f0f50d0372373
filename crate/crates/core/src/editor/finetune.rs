use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{clamp_to_ball, loss_grad_for_spec, Adam, AdamConfig, LossSpec, ModelConfig, ParamSelector, Parameters};

use super::EncodedRequest;

/// Which block a fine-tuning baseline updates and whether it is clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FineTuneMode {
    /// Unconstrained MLP projection.
    Ft,
    /// MLP projection, each weight clamped to `[θ − ε, θ + ε]`.
    FtL,
    /// Query, key and value projections, clamped like `FtL`.
    AttnEdit,
}

impl FineTuneMode {
    pub fn selector(&self, layer: usize) -> ParamSelector {
        match self {
            FineTuneMode::Ft | FineTuneMode::FtL => ParamSelector::mlp_proj(layer),
            FineTuneMode::AttnEdit => ParamSelector::attention_qkv(layer),
        }
    }

    pub fn is_clamped(&self) -> bool {
        !matches!(self, FineTuneMode::Ft)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSchedule {
    pub lr: f64,
    pub max_steps: usize,
    pub early_stop_loss: f64,
}

impl Default for FineTuneSchedule {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            max_steps: 100,
            early_stop_loss: 0.03,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneResult {
    /// The lowest-loss iterate.
    pub params: Parameters,
    pub loss_trajectory: Vec<f64>,
    pub best_loss: f64,
    pub steps: usize,
    /// False when the budget ran out before the loss reached the stop level.
    pub converged: bool,
}

/// Minimizes `−log P[o* | p*]` over one parameter block with Adam, stopping
/// early at `schedule.early_stop_loss`. Clamped modes project every weight
/// back into `[θ − ε, θ + ε]` after each step.
pub fn fine_tune(
    params: &Parameters,
    config: &ModelConfig,
    request: &EncodedRequest,
    layer: usize,
    mode: FineTuneMode,
    eps: f64,
    schedule: &FineTuneSchedule,
) -> Result<FineTuneResult> {
    if layer >= config.n_layers {
        return Err(Error::Bounds {
            what: "fine-tune layer",
            index: layer,
            limit: config.n_layers,
        });
    }
    if mode.is_clamped() && !(eps >= 0.0) {
        return Err(Error::Config(format!("clamp radius must be >= 0, got {eps}")));
    }
    if !(schedule.lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be > 0, got {}", schedule.lr)));
    }
    let selector = mode.selector(layer);
    let (tokens, terms) = request.teacher_forced(&request.target_new);
    let loss = LossSpec::TargetNll { terms };
    let anchors: Vec<Vec<f64>> = selector
        .0
        .iter()
        .map(|&id| params.tensor(id).map(<[f64]>::to_vec))
        .collect::<Result<_>>()?;
    let mut adams: Vec<Adam> = anchors
        .iter()
        .map(|a| Adam::new(a.len(), AdamConfig::with_lr(schedule.lr)))
        .collect();

    let mut current = params.clone();
    let mut best = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut trajectory = Vec::new();
    let mut steps = 0;
    loop {
        let (value, grads) = loss_grad_for_spec(&current, config, &tokens, &loss, &selector)?;
        if !value.is_finite() {
            return Err(Error::Optimization {
                message: "non-finite fine-tuning loss".into(),
                trajectory,
            });
        }
        trajectory.push(value);
        if value < best_loss {
            best_loss = value;
            best = current.clone();
        }
        let converged = value <= schedule.early_stop_loss;
        if converged || steps == schedule.max_steps {
            if !converged {
                log::debug!(
                    "fine-tuning stopped after {steps} steps at loss {best_loss:.4} (target {})",
                    schedule.early_stop_loss
                );
            }
            return Ok(FineTuneResult {
                params: best,
                loss_trajectory: trajectory,
                best_loss,
                steps,
                converged,
            });
        }
        for ((grad, adam), anchor) in grads.iter().zip(&mut adams).zip(&anchors) {
            let x = current.tensor_mut(grad.id)?;
            adam.step(x, &grad.values, 1.0);
            if mode.is_clamped() {
                clamp_to_ball(x, anchor, eps);
            }
        }
        steps += 1;
    }
}
