use crate::dataset::{fact_prompt, find_subject_span, WorldModel};
use crate::error::Result;
use crate::model::{forward_with, probe_recalled, InterventionSet, ModelConfig, Parameters, Probe, Readout};

use super::TracePrompt;

/// Known-fact prompts and how many were missing from the request.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownPrompts {
    pub prompts: Vec<TracePrompt>,
    pub shortfall: usize,
}

/// Up to `n` fact prompts whose greedy completion is the correct object.
///
/// Facts are visited in world order; pass `k` renders fact `f` with query
/// template `(f + k) mod T`, so the first pass gives one prompt per fact
/// with templates spread evenly.
pub fn select_known_prompts(params: &Parameters, config: &ModelConfig, world: &WorldModel, n: usize) -> Result<KnownPrompts> {
    let tok = &world.tokenizer;
    let max_templates = world.relations.iter().map(|r| r.query_templates.len()).max().unwrap_or(0);
    let mut prompts = Vec::new();
    'outer: for pass in 0..max_templates {
        for (fi, fact) in world.facts.iter().enumerate() {
            if prompts.len() >= n {
                break 'outer;
            }
            let n_templates = world.relation(&fact.relation).map_or(0, |r| r.query_templates.len());
            if pass >= n_templates {
                continue;
            }
            let Some(text) = fact_prompt(world, fact, (fi + pass) % n_templates) else {
                continue;
            };
            let tokens = tok.encode(&text)?;
            let subject = tok.encode(&fact.subject)?;
            let target = tok.encode(&fact.object)?;
            let Some(span) = find_subject_span(&tokens, &subject) else {
                continue;
            };
            if tokens.len() + target.len() > config.max_context + 1 {
                continue;
            }
            let probe = Probe {
                prompt: tokens.clone(),
                target: target.clone(),
            };
            if !probe_recalled(params, config, &probe)? {
                continue;
            }
            let trace = forward_with(params, config, &tokens, &InterventionSet::new(), Readout::Last)?;
            let clean_p = trace.last_distribution()[target[0]];
            prompts.push(TracePrompt {
                text,
                tokens,
                subject_span: span,
                correct_object: target[0],
                clean_p,
            });
        }
    }
    let shortfall = n.saturating_sub(prompts.len());
    if shortfall > 0 {
        log::warn!("only {} of {n} requested prompts are known to the model", prompts.len());
    }
    Ok(KnownPrompts { prompts, shortfall })
}
