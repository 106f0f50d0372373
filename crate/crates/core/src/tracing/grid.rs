use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward, forward_with, resume_last_distribution, ForwardTrace, InterventionSet, ModelConfig, Parameters, Patch,
    Readout, Site,
};

use super::{TokenRole, TracePrompt};

/// Which clean state gets restored into the corrupted run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSite {
    /// The single hidden state `h⁽ˡ⁾_i`.
    Hidden,
    /// MLP outputs `m_i` over a window of layers around `l`.
    Mlp,
    /// Attention outputs `a_i` over a window of layers around `l`.
    Attn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Standard deviation `ν` of the embedding noise.
    pub noise_scale: f64,
    pub n_noise_repeats: usize,
    /// Layers restored per cell for the mlp/attn sites:
    /// `[l − (w−1)/2, l − (w−1)/2 + w − 1]`, clipped to the model.
    pub window_width: usize,
    pub site: TraceSite,
    /// Also pin the last-subject-token MLP outputs of every layer to their
    /// corrupted values.
    pub disable_mlp: bool,
    /// Repeat `r` draws its noise from seed `base_seed + r`.
    pub base_seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            noise_scale: 0.1,
            n_noise_repeats: 10,
            window_width: 10,
            site: TraceSite::Hidden,
            disable_mlp: false,
            base_seed: 0,
        }
    }
}

impl TraceConfig {
    /// Default settings with `ν` at three times the RMS token-embedding
    /// entry.
    pub fn scaled_to(params: &Parameters) -> Self {
        Self {
            noise_scale: 3.0 * params.embedding_rms(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise scale {} must be >= 0", self.noise_scale)));
        }
        if self.n_noise_repeats == 0 || self.window_width == 0 {
            return Err(Error::Config("n_noise_repeats and window_width must be >= 1".into()));
        }
        Ok(())
    }
}

/// Restored probabilities for every `(token, layer)` of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceGrid {
    pub prompt: String,
    pub tokens: Vec<usize>,
    pub subject_span: (usize, usize),
    pub correct_object: usize,
    pub site: TraceSite,
    pub disable_mlp: bool,
    pub clean_p: f64,
    /// Mean over noise repeats of the corrupted-run probability.
    pub corrupted_p: f64,
    /// `cells[token][layer]`: mean restored probability.
    pub cells: Vec<Vec<f64>>,
    pub roles: Vec<TokenRole>,
}

impl TraceGrid {
    pub fn n_layers(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    /// `restored_p − corrupted_p`.
    pub fn effect(&self, token: usize, layer: usize) -> f64 {
        self.cells[token][layer] - self.corrupted_p
    }

    /// Flat `token_index,token_text,layer,restored_p` rows with a header.
    pub fn to_csv(&self, token_text: impl Fn(usize) -> String) -> String {
        let mut out = String::from("token_index,token_text,layer,restored_p\n");
        for (i, row) in self.cells.iter().enumerate() {
            let text = token_text(self.tokens[i]).replace('"', "\"\"");
            for (l, p) in row.iter().enumerate() {
                out.push_str(&format!("{i},\"{text}\",{l},{p}\n"));
            }
        }
        out
    }
}

/// Gaussian noise patches on the subject-token embeddings.
pub fn noise_patches(config: &ModelConfig, prompt: &TracePrompt, noise_scale: f64, seed: u64) -> Result<InterventionSet> {
    let dist = Normal::new(0.0, noise_scale).map_err(|e| Error::Config(format!("noise scale: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = prompt.subject_span;
    let mut set = InterventionSet::new();
    for token in a..=b {
        let payload = (0..config.hidden).map(|_| dist.sample(&mut rng)).collect();
        set.push(Patch::new(Site::EmbeddingNoise, token, 0, payload));
    }
    Ok(set)
}

/// One corrupted run: noise on the subject embeddings only. Returns the
/// probability of the correct object and the full trace.
pub fn corrupted_run(
    params: &Parameters,
    config: &ModelConfig,
    prompt: &TracePrompt,
    noise_scale: f64,
    seed: u64,
) -> Result<(f64, ForwardTrace)> {
    prompt.validate()?;
    let noise = noise_patches(config, prompt, noise_scale, seed)?;
    let trace = forward_with(params, config, &prompt.tokens, &noise, Readout::Last)?;
    Ok((trace.last_distribution()[prompt.correct_object], trace))
}

/// Inclusive layer window restored around `layer`.
pub fn restore_window(layer: usize, width: usize, n_layers: usize) -> (usize, usize) {
    let lo = layer.saturating_sub((width - 1) / 2);
    let hi = (lo + width - 1).min(n_layers - 1);
    (lo, hi)
}

/// Restores clean states cell by cell into corrupted runs and averages the
/// correct-object probability over noise repeats.
pub fn trace_grid(params: &Parameters, config: &ModelConfig, prompt: &TracePrompt, trace_config: &TraceConfig) -> Result<TraceGrid> {
    prompt.validate()?;
    trace_config.validate()?;
    let n = prompt.tokens.len();
    let n_layers = config.n_layers;
    let clean = forward(params, config, &prompt.tokens, &InterventionSet::new())?;
    let target = prompt.correct_object;
    let last_subject = prompt.last_subject_token();

    let mut cells = vec![vec![0.0; n_layers]; n];
    let mut corrupted_total = 0.0;
    for r in 0..trace_config.n_noise_repeats {
        let seed = trace_config.base_seed.wrapping_add(r as u64);
        let (corrupted_p, corrupted) = corrupted_run(params, config, prompt, trace_config.noise_scale, seed)?;
        corrupted_total += corrupted_p;
        let freeze: Vec<Patch> = if trace_config.disable_mlp {
            (0..n_layers)
                .map(|l| Patch::new(Site::MlpFreeze, last_subject, l, corrupted.mlp_out[l].row(last_subject).to_vec()))
                .collect()
        } else {
            Vec::new()
        };
        for (token, row) in cells.iter_mut().enumerate() {
            for (layer, cell) in row.iter_mut().enumerate() {
                let restores: Vec<Patch> = match trace_config.site {
                    TraceSite::Hidden => vec![Patch::new(Site::Hidden, token, layer, clean.hidden(layer).row(token).to_vec())],
                    TraceSite::Mlp | TraceSite::Attn => {
                        let (lo, hi) = restore_window(layer, trace_config.window_width, n_layers);
                        (lo..=hi)
                            .map(|l| match trace_config.site {
                                TraceSite::Mlp => Patch::new(Site::MlpOut, token, l, clean.mlp_out[l].row(token).to_vec()),
                                _ => Patch::new(Site::AttnOut, token, l, clean.attn_out[l].row(token).to_vec()),
                            })
                            .collect()
                    }
                };
                let start = restores.iter().map(|p| p.layer).min().expect("at least one restore");
                let mut set = InterventionSet::new();
                set.extend(restores);
                set.extend(freeze.iter().filter(|p| p.layer >= start).cloned());
                let probs = resume_last_distribution(params, config, &corrupted, start, &set)?;
                *cell += probs[target];
            }
        }
    }
    let reps = trace_config.n_noise_repeats as f64;
    cells.iter_mut().flatten().for_each(|c| *c /= reps);

    Ok(TraceGrid {
        prompt: prompt.text.clone(),
        tokens: prompt.tokens.clone(),
        subject_span: prompt.subject_span,
        correct_object: target,
        site: trace_config.site,
        disable_mlp: trace_config.disable_mlp,
        clean_p: prompt.clean_p,
        corrupted_p: corrupted_total / reps,
        cells,
        roles: TokenRole::assign(n, prompt.subject_span),
    })
}
