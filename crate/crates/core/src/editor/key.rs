use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_with, generate, InterventionSet, ModelConfig, Parameters, Readout, Sampler};

/// How many model-sampled prefixes of each length to average the key over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPlan {
    /// `(prefix length, count)` pairs.
    pub prefixes: Vec<(usize, usize)>,
    pub seed: u64,
    /// Top-k used while sampling prefixes (0 = full distribution).
    pub top_k: usize,
}

impl Default for KeyPlan {
    fn default() -> Self {
        Self {
            prefixes: vec![(2, 20), (5, 20), (10, 10)],
            seed: 0,
            top_k: 5,
        }
    }
}

impl KeyPlan {
    pub fn validate(&self) -> Result<()> {
        if self.prefixes.is_empty() || self.prefixes.iter().any(|&(len, n)| len == 0 || n == 0) {
            return Err(Error::Config("key plan needs positive prefix lengths and counts".into()));
        }
        Ok(())
    }

    pub fn n_prefixes(&self) -> usize {
        self.prefixes.iter().map(|p| p.1).sum()
    }
}

/// Samples the plan's prefixes from the model, starting each from
/// `start_token` and terminating it with `start_token` so the subject opens
/// a new sentence. Prefix `i` uses sampling seed `plan.seed + i`.
pub fn sample_prefixes(params: &Parameters, config: &ModelConfig, plan: &KeyPlan, start_token: usize) -> Result<Vec<Vec<usize>>> {
    plan.validate()?;
    let mut out = Vec::with_capacity(plan.n_prefixes());
    for &(len, n) in &plan.prefixes {
        for _ in 0..n {
            let sampler = Sampler {
                top_k: plan.top_k,
                max_len: len + 1,
                seed: plan.seed.wrapping_add(out.len() as u64),
            };
            let mut prefix = generate(params, config, &[start_token], &sampler)?.split_off(1);
            prefix.push(start_token);
            out.push(prefix);
        }
    }
    Ok(out)
}

/// Mean post-nonlinearity MLP activation at `layer` over the last subject
/// token of `prefix + subject` for every prefix.
pub fn compute_k_star(
    params: &Parameters,
    config: &ModelConfig,
    subject: &[usize],
    prefixes: &[Vec<usize>],
    layer: usize,
) -> Result<Vec<f64>> {
    if subject.is_empty() {
        return Err(Error::Empty("subject tokens"));
    }
    if prefixes.is_empty() {
        return Err(Error::Empty("key prefixes"));
    }
    if layer >= config.n_layers {
        return Err(Error::Bounds {
            what: "key layer",
            index: layer,
            limit: config.n_layers,
        });
    }
    let mut sum = vec![0.0; config.mlp_dim];
    for prefix in prefixes {
        let mut tokens = prefix.clone();
        tokens.extend_from_slice(subject);
        let trace = forward_with(params, config, &tokens, &InterventionSet::new(), Readout::Last)?;
        for (s, k) in sum.iter_mut().zip(trace.mlp_key[layer].row(tokens.len() - 1)) {
            *s += k;
        }
    }
    let n = prefixes.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}
