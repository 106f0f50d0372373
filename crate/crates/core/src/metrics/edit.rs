use serde::{Deserialize, Serialize};

use crate::dataset::{CounterfactRecord, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{generate, perplexity, target_probability, ModelConfig, Parameters, Sampler};

use super::scores::{magnitude_score, success_score};
use super::text::{generation_entropy, reference_score};

/// Metrics of one edited model on its own record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub case_id: usize,
    /// Efficacy: `P[o* | p*] > P[oᶜ | p*]`.
    pub es: f64,
    pub em: f64,
    /// Paraphrase scores over the paraphrase prompts.
    pub ps: f64,
    pub pm: f64,
    /// Neighborhood scores with the roles flipped: `P[oᶜ] > P[o*]`.
    pub ns: f64,
    pub nm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub essence: Option<f64>,
}

/// Sampling used for the fluency and consistency metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub top_k: usize,
    pub samples_per_prompt: usize,
    /// Total length of each generated sequence, prompt included.
    pub max_len: usize,
    pub seed: u64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            top_k: 5,
            samples_per_prompt: 3,
            max_len: 32,
            seed: 0,
        }
    }
}

/// Which of the optional metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationSettings>,
    #[serde(default)]
    pub essence: bool,
}

/// `(P[a | prompt], P[b | prompt])` for every prompt.
fn pairs(
    params: &Parameters,
    config: &ModelConfig,
    tokenizer: &Tokenizer,
    prompts: &[&str],
    a: &[usize],
    b: &[usize],
) -> Result<Vec<(f64, f64)>> {
    prompts
        .iter()
        .map(|p| {
            let tokens = tokenizer.encode(p)?;
            Ok((
                target_probability(params, config, &tokens, a)?,
                target_probability(params, config, &tokens, b)?,
            ))
        })
        .collect()
}

/// Efficacy, paraphrase and neighborhood scores of `params` on `record`.
pub fn edit_metrics(params: &Parameters, config: &ModelConfig, tokenizer: &Tokenizer, record: &CounterfactRecord) -> Result<RecordMetrics> {
    let new = tokenizer.encode(&record.target_new)?;
    let old = tokenizer.encode(&record.target_true)?;
    let efficacy = pairs(params, config, tokenizer, &[record.rewrite_prompt.as_str()], &new, &old)?;
    let paraphrase_prompts: Vec<&str> = record.paraphrase_prompts.iter().map(String::as_str).collect();
    let paraphrase = pairs(params, config, tokenizer, &paraphrase_prompts, &new, &old)?;
    let neighborhood_prompts: Vec<&str> = record.neighborhood_prompts.iter().map(|p| p.prompt.as_str()).collect();
    let neighborhood = pairs(params, config, tokenizer, &neighborhood_prompts, &old, &new)?;
    Ok(RecordMetrics {
        case_id: record.case_id,
        es: success_score(&efficacy)?,
        em: magnitude_score(&efficacy)?,
        ps: success_score(&paraphrase)?,
        pm: magnitude_score(&paraphrase)?,
        ns: success_score(&neighborhood)?,
        nm: magnitude_score(&neighborhood)?,
        ge: None,
        rs: None,
        essence: None,
    })
}

/// Samples `samples_per_prompt` continuations of every generation prompt.
/// Sample `j` of prompt `i` uses seed `seed + 1000·case_id + 10·i + j`.
pub fn generate_texts(
    params: &Parameters,
    config: &ModelConfig,
    tokenizer: &Tokenizer,
    record: &CounterfactRecord,
    settings: &GenerationSettings,
) -> Result<Vec<String>> {
    let mut texts = Vec::new();
    for (i, prompt) in record.generation_prompts.iter().enumerate() {
        let tokens = tokenizer.encode(prompt)?;
        for j in 0..settings.samples_per_prompt {
            let seed = settings
                .seed
                .wrapping_add(1000u64.wrapping_mul(record.case_id as u64))
                .wrapping_add((10 * i + j) as u64);
            let sampler = Sampler {
                top_k: settings.top_k,
                max_len: settings.max_len,
                seed,
            };
            texts.push(tokenizer.decode(&generate(params, config, &tokens, &sampler)?));
        }
    }
    Ok(texts)
}

/// Mean perplexity over `texts`.
pub fn essence_score(params: &Parameters, config: &ModelConfig, tokenizer: &Tokenizer, texts: &[String]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::Empty("essence texts"));
    }
    let mut total = 0.0;
    for text in texts {
        total += perplexity(params, config, &tokenizer.encode(text)?)?;
    }
    Ok(total / texts.len() as f64)
}

/// [`edit_metrics`] plus the optional generation and essence metrics.
/// GE pools n-gram counts over all generated texts of the record.
pub fn evaluate_record(
    params: &Parameters,
    config: &ModelConfig,
    tokenizer: &Tokenizer,
    record: &CounterfactRecord,
    options: &EvalOptions,
) -> Result<RecordMetrics> {
    let mut m = edit_metrics(params, config, tokenizer, record)?;
    if let Some(settings) = &options.generation {
        let texts = generate_texts(params, config, tokenizer, record, settings)?;
        if !texts.is_empty() {
            m.ge = Some(generation_entropy(&texts)?);
            m.rs = Some(reference_score(&texts, &record.reference_texts)?);
        }
    }
    if options.essence {
        m.essence = Some(essence_score(params, config, tokenizer, &record.essence_texts)?);
    }
    Ok(m)
}
