//! Fact editing: rank-one insertion of a new key/value pair into one MLP
//! projection, and gradient-based baselines that fine-tune a single layer.

mod finetune;
mod key;
mod rome;
mod value;

pub use finetune::{fine_tune, FineTuneMode, FineTuneResult, FineTuneSchedule};
pub use key::{compute_k_star, sample_prefixes, KeyPlan};
pub use rome::{
    apply_rome, collect_key_statistics, realized_value, rome_edit, select_edit_layer, EditResult, RomeConfig, MIN_KEY_RESPONSE,
};
pub use value::{optimize_v_star, VStar, VStarConfig, VStarEvaluation, VStarProblem};

use serde::{Deserialize, Serialize};

use crate::dataset::{find_subject_span, CounterfactRecord, Tokenizer};
use crate::error::{Error, Result};
use crate::model::{target_probability, ModelConfig, Parameters};

/// Which editor produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMethod {
    Rome,
    Ft,
    FtL,
    AttnEdit,
}

impl EditMethod {
    pub const ALL: [EditMethod; 4] = [EditMethod::Rome, EditMethod::Ft, EditMethod::FtL, EditMethod::AttnEdit];

    pub fn label(&self) -> &'static str {
        match self {
            EditMethod::Rome => "ROME",
            EditMethod::Ft => "FT",
            EditMethod::FtL => "FT+L",
            EditMethod::AttnEdit => "AttnEdit",
        }
    }
}

impl std::str::FromStr for EditMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rome" => Ok(EditMethod::Rome),
            "ft" => Ok(EditMethod::Ft),
            "ft+l" | "ft-l" | "ftl" => Ok(EditMethod::FtL),
            "attn-edit" | "attnedit" | "attn" => Ok(EditMethod::AttnEdit),
            _ => Err(Error::Config(format!("unknown edit method {s:?}"))),
        }
    }
}

/// A request to make the model say `target_new` for `(subject, relation)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub case_id: usize,
    pub subject: String,
    pub relation: String,
    pub target_true: String,
    pub target_new: String,
    pub rewrite_prompt: String,
    /// `"{subject} is a"`, used to keep the subject's identity in place.
    pub essence_prompt: String,
    pub layer: usize,
}

impl EditRequest {
    pub fn from_record(record: &CounterfactRecord, layer: usize) -> Self {
        Self {
            case_id: record.case_id,
            subject: record.subject.clone(),
            relation: record.relation.clone(),
            target_true: record.target_true.clone(),
            target_new: record.target_new.clone(),
            rewrite_prompt: record.rewrite_prompt.clone(),
            essence_prompt: record.essence_prompt.clone(),
            layer,
        }
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.target_new == self.target_true {
            return Err(Error::Config(format!("new object equals the current one ({})", self.target_new)));
        }
        if !self.rewrite_prompt.contains(&self.subject) {
            return Err(Error::Config(format!(
                "rewrite prompt {:?} does not contain {:?}",
                self.rewrite_prompt, self.subject
            )));
        }
        if self.layer >= config.n_layers {
            return Err(Error::Bounds {
                what: "edit layer",
                index: self.layer,
                limit: config.n_layers,
            });
        }
        Ok(())
    }

    /// Validates and tokenizes the request.
    pub fn encode(&self, tokenizer: &Tokenizer, config: &ModelConfig) -> Result<EncodedRequest> {
        self.validate(config)?;
        let subject = tokenizer.encode(&self.subject)?;
        let prompt = tokenizer.encode(&self.rewrite_prompt)?;
        let essence = tokenizer.encode(&self.essence_prompt)?;
        let subject_in = |tokens: &[usize], what: &str| {
            find_subject_span(tokens, &subject)
                .map(|(_, b)| b)
                .ok_or_else(|| Error::Config(format!("subject {:?} not found in the {what} prompt", self.subject)))
        };
        let last_subject = subject_in(&prompt, "rewrite")?;
        let essence_last_subject = subject_in(&essence, "essence")?;
        let encoded = EncodedRequest {
            layer: self.layer,
            subject,
            target_true: tokenizer.encode(&self.target_true)?,
            target_new: tokenizer.encode(&self.target_new)?,
            prompt,
            last_subject,
            essence,
            essence_last_subject,
        };
        if encoded.target_new.is_empty() || encoded.target_true.is_empty() {
            return Err(Error::Empty("edit target"));
        }
        if encoded.prompt.len() + encoded.target_new.len() - 1 > config.max_context {
            return Err(Error::TooShort(format!(
                "rewrite prompt plus target exceeds the context of {}",
                config.max_context
            )));
        }
        Ok(encoded)
    }
}

/// A tokenized [`EditRequest`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedRequest {
    pub layer: usize,
    pub subject: Vec<usize>,
    pub target_true: Vec<usize>,
    pub target_new: Vec<usize>,
    pub prompt: Vec<usize>,
    /// Index of the last subject token in `prompt`.
    pub last_subject: usize,
    pub essence: Vec<usize>,
    /// Index of the last subject token in `essence`.
    pub essence_last_subject: usize,
}

impl EncodedRequest {
    /// Rewrite prompt followed by all but the last target token, and the
    /// teacher-forced `(position, token)` terms of `target`.
    pub fn teacher_forced(&self, target: &[usize]) -> (Vec<usize>, Vec<(usize, usize)>) {
        let mut tokens = self.prompt.clone();
        tokens.extend_from_slice(&target[..target.len() - 1]);
        let start = self.prompt.len() - 1;
        let terms = target.iter().enumerate().map(|(j, &t)| (start + j, t)).collect();
        (tokens, terms)
    }

    /// `(P[target_true | prompt], P[target_new | prompt])`.
    pub fn probabilities(&self, params: &Parameters, config: &ModelConfig) -> Result<(f64, f64)> {
        Ok((
            target_probability(params, config, &self.prompt, &self.target_true)?,
            target_probability(params, config, &self.prompt, &self.target_new)?,
        ))
    }
}
