use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward_with, grad_wrt_activation, ActivationSite, Adam, AdamConfig, InterventionSet, LossSpec, ModelConfig,
    Parameters, Readout,
};
use crate::numerics::{all_finite, dot, sub};

use super::EncodedRequest;

/// Optimizer settings for the value vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VStarConfig {
    pub lr: f64,
    /// Coefficient of `‖z − m₀‖² / ‖m₀‖²`, where `m₀` is the unedited MLP
    /// output.
    pub weight_decay: f64,
    /// Weight `λ` of the essence KL term.
    pub kl_weight: f64,
    pub max_steps: usize,
    pub early_stop_loss: f64,
}

impl Default for VStarConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            weight_decay: 1.5e-3,
            kl_weight: 1e2,
            max_steps: 25,
            early_stop_loss: 5e-2,
        }
    }
}

impl VStarConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [self.lr, self.weight_decay, self.kl_weight, self.early_stop_loss]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite());
        if !all_positive || self.max_steps == 0 {
            return Err(Error::Config("v* settings must be positive with max_steps >= 1".into()));
        }
        Ok(())
    }
}

/// The value objective for one request:
/// `−log P[o* | p*] + λ·KL(P[· | p′] patched ‖ unpatched) + wd·‖z − m₀‖²/‖m₀‖²`,
/// with `z` substituted as the MLP output at the last subject token of both
/// prompts.
#[derive(Debug, Clone)]
pub struct VStarProblem<'a> {
    params: &'a Parameters,
    config: &'a ModelConfig,
    request: &'a EncodedRequest,
    settings: VStarConfig,
    nll_tokens: Vec<usize>,
    nll: LossSpec,
    kl: LossSpec,
    /// Unedited MLP output at the rewrite prompt's last subject token.
    pub m_init: Vec<f64>,
}

/// Objective value split into its parts, with the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct VStarEvaluation {
    pub total: f64,
    pub nll: f64,
    pub kl: f64,
    pub grad: Vec<f64>,
}

impl<'a> VStarProblem<'a> {
    pub fn new(
        params: &'a Parameters,
        config: &'a ModelConfig,
        request: &'a EncodedRequest,
        settings: VStarConfig,
    ) -> Result<Self> {
        let (nll_tokens, terms) = request.teacher_forced(&request.target_new);
        let clean = forward_with(params, config, &request.prompt, &InterventionSet::new(), Readout::Last)?;
        let m_init = clean.mlp_out[request.layer].row(request.last_subject).to_vec();
        let essence = forward_with(params, config, &request.essence, &InterventionSet::new(), Readout::Last)?;
        let kl = LossSpec::Kl {
            position: request.essence.len() - 1,
            reference: essence.last_distribution().to_vec(),
        };
        Ok(Self {
            params,
            config,
            request,
            settings,
            nll_tokens,
            nll: LossSpec::TargetNll { terms },
            kl,
            m_init,
        })
    }

    /// `wd / ‖m₀‖²`, or `wd` when `m₀ = 0`.
    fn decay_coefficient(&self) -> f64 {
        let m2 = dot(&self.m_init, &self.m_init);
        if m2 > 0.0 {
            self.settings.weight_decay / m2
        } else {
            self.settings.weight_decay
        }
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<VStarEvaluation> {
        let layer = self.request.layer;
        let (nll, g_nll) = grad_wrt_activation(
            self.params,
            self.config,
            &self.nll_tokens,
            ActivationSite {
                layer,
                token: self.request.last_subject,
            },
            Some(z),
            &self.nll,
        )?;
        let (kl, g_kl) = grad_wrt_activation(
            self.params,
            self.config,
            &self.request.essence,
            ActivationSite {
                layer,
                token: self.request.essence_last_subject,
            },
            Some(z),
            &self.kl,
        )?;
        let delta = sub(z, &self.m_init);
        let VStarConfig { kl_weight, .. } = self.settings;
        let decay = self.decay_coefficient();
        let grad = g_nll
            .iter()
            .zip(&g_kl)
            .zip(&delta)
            .map(|((a, b), d)| a + kl_weight * b + 2.0 * decay * d)
            .collect();
        Ok(VStarEvaluation {
            total: nll + kl_weight * kl + decay * dot(&delta, &delta),
            nll,
            kl,
            grad,
        })
    }
}

/// Optimized value vector and its loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VStar {
    pub v_star: Vec<f64>,
    /// Objective before each step, then at the returned point.
    pub trajectory: Vec<f64>,
    pub final_nll: f64,
    pub final_kl: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Minimizes the value objective with Adam from the current MLP output,
/// stopping once the objective is at most `early_stop_loss`.
pub fn optimize_v_star(
    params: &Parameters,
    config: &ModelConfig,
    request: &EncodedRequest,
    settings: &VStarConfig,
) -> Result<VStar> {
    settings.validate()?;
    let problem = VStarProblem::new(params, config, request, *settings)?;
    let mut z = problem.m_init.clone();
    let mut adam = Adam::new(z.len(), AdamConfig::with_lr(settings.lr));
    let mut trajectory = Vec::new();
    let mut steps = 0;
    loop {
        let eval = problem.evaluate(&z)?;
        trajectory.push(eval.total);
        if !eval.total.is_finite() || !all_finite(&eval.grad) {
            return Err(Error::Optimization {
                message: "non-finite value objective".into(),
                trajectory,
            });
        }
        let converged = eval.total <= settings.early_stop_loss;
        if converged || steps == settings.max_steps {
            return Ok(VStar {
                v_star: z,
                trajectory,
                final_nll: eval.nll,
                final_kl: eval.kl,
                steps,
                converged,
            });
        }
        adam.step(&mut z, &eval.grad, 1.0);
        steps += 1;
    }
}
