use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::forward::{forward, forward_with, Readout};
use super::intervention::InterventionSet;
use super::params::Parameters;

/// Top-k sampling settings. `top_k = 0` samples from the full distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampler {
    pub top_k: usize,
    /// Total sequence length to stop at (capped by the model context).
    pub max_len: usize,
    pub seed: u64,
}

/// Draws one index from `probs` restricted to its `top_k` largest entries.
pub fn sample_top_k<R: Rng + ?Sized>(probs: &[f64], top_k: usize, rng: &mut R) -> usize {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    if top_k > 0 && top_k < probs.len() {
        idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        idx.truncate(top_k);
    }
    let total: f64 = idx.iter().map(|&i| probs[i]).sum();
    let mut u = rng.random::<f64>() * total;
    for &i in &idx {
        u -= probs[i];
        if u < 0.0 {
            return i;
        }
    }
    *idx.last().expect("nonempty vocabulary")
}

/// Autoregressive sampling; returns the prompt followed by the new tokens.
pub fn generate(params: &Parameters, config: &ModelConfig, prompt: &[usize], sampler: &Sampler) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let limit = sampler.max_len.min(config.max_context);
    let mut tokens = prompt.to_vec();
    while tokens.len() < limit {
        let trace = forward_with(params, config, &tokens, &InterventionSet::new(), Readout::Last)?;
        tokens.push(sample_top_k(trace.last_distribution(), sampler.top_k, &mut rng));
    }
    Ok(tokens)
}

/// `exp` of the mean negative log-likelihood of tokens `2..n`.
pub fn perplexity(params: &Parameters, config: &ModelConfig, tokens: &[usize]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::TooShort(format!("perplexity needs >= 2 tokens, got {}", tokens.len())));
    }
    let trace = forward(params, config, tokens, &InterventionSet::new())?;
    let nll: f64 = (0..tokens.len() - 1)
        .map(|i| -trace.probs.row(i)[tokens[i + 1]].ln())
        .sum();
    Ok((nll / (tokens.len() - 1) as f64).exp())
}

/// `P[target | prompt]` as the product of teacher-forced token
/// probabilities.
pub fn target_probability(params: &Parameters, config: &ModelConfig, prompt: &[usize], target: &[usize]) -> Result<f64> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    if target.is_empty() {
        return Err(Error::Empty("target"));
    }
    let mut tokens = prompt.to_vec();
    tokens.extend_from_slice(&target[..target.len() - 1]);
    let start = prompt.len() - 1;
    let trace = forward_with(
        params,
        config,
        &tokens,
        &InterventionSet::new(),
        Readout::Positions((start..tokens.len()).collect()),
    )?;
    Ok(target.iter().enumerate().map(|(j, &t)| trace.probs.row(j)[t]).product())
}
