use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::forward::{forward, forward_with, Readout};
use super::intervention::InterventionSet;
use super::loss::batch_loss_and_grad;
use super::optim::{Adam, AdamConfig};
use super::params::Parameters;

/// A fact-completion check: the model should emit `target` after `prompt`
/// (greedy, teacher-forced over multi-token targets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub prompt: Vec<usize>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub seed: u64,
    pub max_epochs: usize,
    /// Keep training at least this many epochs even after the target is met.
    pub min_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub warmup_steps: usize,
    /// Learning-rate multiplier reached at the last epoch by cosine decay
    /// (`1` keeps the rate constant).
    pub final_lr_fraction: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    /// Stop once this fraction of probes is recalled.
    pub target_accuracy: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: 200,
            min_epochs: 0,
            batch_size: 16,
            adam: AdamConfig::with_lr(3e-3),
            warmup_steps: 50,
            final_lr_fraction: 0.1,
            grad_clip: 1.0,
            target_accuracy: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub steps: usize,
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub probe_accuracy: f64,
    pub reached_target: bool,
}

/// Adam on mean next-token NLL over shuffled minibatches of `corpus`,
/// stopping when `probes` reach the target accuracy. Deterministic given
/// `schedule.seed`.
pub fn train(
    params: &Parameters,
    config: &ModelConfig,
    corpus: &[Vec<usize>],
    probes: &[Probe],
    schedule: &TrainSchedule,
) -> Result<(Parameters, TrainingMeta)> {
    let usable: Vec<&Vec<usize>> = corpus.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    params.validate(config)?;
    let mut params = params.clone();
    let ids = params.tensor_ids();
    let mut optimizers: Vec<Adam> = ids
        .iter()
        .map(|&id| Ok(Adam::new(params.tensor(id)?.len(), schedule.adam)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut meta = TrainingMeta::default();
    let total_steps = (schedule.max_epochs * usable.len().div_ceil(schedule.batch_size)).max(1);

    for epoch in 0..schedule.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| usable[i].clone()).collect();
            let (loss, mut grad) = batch_loss_and_grad(&params, config, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient at epoch {epoch}, step {}",
                    meta.steps
                )));
            }
            if schedule.grad_clip > 0.0 {
                let norm = ids
                    .iter()
                    .map(|&id| grad.tensor(id).map(|t| t.iter().map(|g| g * g).sum::<f64>()))
                    .sum::<Result<f64>>()?
                    .sqrt();
                if norm > schedule.grad_clip {
                    let s = schedule.grad_clip / norm;
                    for &id in &ids {
                        grad.tensor_mut(id)?.iter_mut().for_each(|g| *g *= s);
                    }
                }
            }
            let warmup = if schedule.warmup_steps > 0 {
                ((meta.steps + 1) as f64 / schedule.warmup_steps as f64).min(1.0)
            } else {
                1.0
            };
            let progress = meta.steps as f64 / total_steps as f64;
            let floor = schedule.final_lr_fraction;
            let lr_scale = warmup * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            for (opt, &id) in optimizers.iter_mut().zip(&ids) {
                let g = grad.tensor(id)?.to_vec();
                opt.step(params.tensor_mut(id)?, &g, lr_scale);
            }
            meta.steps += 1;
            epoch_loss += loss;
            n_batches += 1;
        }
        meta.epochs = epoch + 1;
        meta.loss_curve.push(epoch_loss / n_batches as f64);
        if !probes.is_empty() {
            meta.probe_accuracy = probe_accuracy(&params, config, probes)?;
            if meta.probe_accuracy >= schedule.target_accuracy {
                meta.reached_target = true;
                if meta.epochs >= schedule.min_epochs {
                    break;
                }
            }
        }
    }
    Ok((params, meta))
}

/// Fraction of probes whose every target token is the greedy argmax under
/// teacher forcing.
pub fn probe_accuracy(params: &Parameters, config: &ModelConfig, probes: &[Probe]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::Empty("probes"));
    }
    let mut hits = 0usize;
    for probe in probes {
        if probe_recalled(params, config, probe)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}

pub fn probe_recalled(params: &Parameters, config: &ModelConfig, probe: &Probe) -> Result<bool> {
    let mut tokens = probe.prompt.clone();
    tokens.extend_from_slice(&probe.target[..probe.target.len().saturating_sub(1)]);
    let start = probe.prompt.len() - 1;
    let positions: Vec<usize> = (start..tokens.len()).collect();
    let trace = forward_with(params, config, &tokens, &InterventionSet::new(), Readout::Positions(positions))?;
    Ok(probe
        .target
        .iter()
        .enumerate()
        .all(|(j, &t)| argmax(trace.probs.row(j)) == t))
}

/// Fraction of next-token positions predicted correctly by argmax.
pub fn next_token_accuracy(params: &Parameters, config: &ModelConfig, corpus: &[Vec<usize>]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for seq in corpus.iter().filter(|s| s.len() >= 2) {
        let trace = forward(params, config, seq, &InterventionSet::new())?;
        for i in 0..seq.len() - 1 {
            total += 1;
            if argmax(trace.probs.row(i)) == seq[i + 1] {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("corpus"));
    }
    Ok(hits as f64 / total as f64)
}

/// Index of the largest entry (first on ties).
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
