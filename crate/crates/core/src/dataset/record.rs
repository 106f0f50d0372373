use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lexicon::ESSENCE_TEMPLATE;
use super::world::{render, Fact, WorldModel};

/// Neighborhood prompts per record.
pub const N_NEIGHBORHOOD: usize = 10;
/// Paraphrase prompts per record.
pub const N_PARAPHRASE: usize = 2;
/// Most reference subjects whose descriptions form a record's references.
pub const MAX_REFERENCE_SUBJECTS: usize = 5;

/// A prompt about some subject, ending right before the object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectPrompt {
    pub subject: String,
    pub prompt: String,
}

/// One counterfactual edit case with its evaluation prompts and texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactRecord {
    pub case_id: usize,
    pub subject: String,
    pub relation: String,
    pub target_true: String,
    pub target_new: String,
    pub rewrite_prompt: String,
    pub essence_prompt: String,
    pub paraphrase_prompts: Vec<String>,
    pub neighborhood_prompts: Vec<SubjectPrompt>,
    pub generation_prompts: Vec<String>,
    pub reference_texts: Vec<String>,
    pub essence_texts: Vec<String>,
}

/// Builds the counterfactual record for `fact`.
///
/// The new object is drawn from the relation's other objects with weights
/// equal to their frequency in the world. Texts are split to fit
/// `max_text_tokens`.
pub fn build_record(world: &WorldModel, fact: &Fact, case_id: usize, seed: u64, max_text_tokens: usize) -> Result<CounterfactRecord> {
    let relation = world
        .relation(&fact.relation)
        .ok_or_else(|| Error::Config(format!("unknown relation {}", fact.relation)))?;
    if world.object_of(&fact.subject, &fact.relation) != Some(fact.object.as_str()) {
        return Err(Error::Config(format!(
            "({}, {}, {}) is not a fact of the world",
            fact.subject, fact.relation, fact.object
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let candidates: Vec<(String, usize)> = world
        .object_frequencies(&fact.relation)
        .into_iter()
        .filter(|(o, _)| *o != fact.object)
        .collect();
    let target_new = candidates
        .choose_weighted(&mut rng, |(_, w)| *w as f64)
        .map_err(|_| Error::Infeasible(format!("relation {} has a single object", fact.relation)))?
        .0
        .clone();

    let mut template_order: Vec<&String> = relation.query_templates.iter().collect();
    template_order.shuffle(&mut rng);
    let rewrite_prompt = render(template_order[0], &fact.subject);
    let paraphrase_prompts: Vec<String> = template_order[1..=N_PARAPHRASE]
        .iter()
        .map(|t| render(t, &fact.subject))
        .collect();

    let mut neighbors: Vec<&str> = world
        .subjects_with(&fact.relation, &fact.object)
        .into_iter()
        .filter(|s| *s != fact.subject)
        .collect();
    neighbors.shuffle(&mut rng);
    let combos = neighbors.len() * relation.query_templates.len();
    if combos < N_NEIGHBORHOOD {
        return Err(Error::InsufficientNeighborhood {
            subject: fact.subject.clone(),
            needed: N_NEIGHBORHOOD,
            found: combos,
        });
    }
    let start = rng.random_range(0..relation.query_templates.len());
    let neighborhood_prompts = (0..N_NEIGHBORHOOD)
        .map(|i| {
            let j = i % neighbors.len();
            let round = i / neighbors.len();
            let subject = neighbors[j];
            let template = &relation.query_templates[(start + j + round) % relation.query_templates.len()];
            SubjectPrompt {
                subject: subject.to_string(),
                prompt: render(template, subject),
            }
        })
        .collect();

    let generation_prompts = relation
        .generation_templates
        .iter()
        .take(3)
        .map(|t| render(t, &fact.subject))
        .collect();

    let mut reference_subjects = world.subjects_with(&fact.relation, &target_new);
    reference_subjects.shuffle(&mut rng);
    reference_subjects.truncate(MAX_REFERENCE_SUBJECTS);
    let reference_texts = reference_subjects
        .iter()
        .flat_map(|s| world.description_texts(s, max_text_tokens))
        .collect();

    Ok(CounterfactRecord {
        case_id,
        subject: fact.subject.clone(),
        relation: fact.relation.clone(),
        target_true: fact.object.clone(),
        target_new,
        rewrite_prompt,
        essence_prompt: render(ESSENCE_TEMPLATE, &fact.subject),
        paraphrase_prompts,
        neighborhood_prompts,
        generation_prompts,
        reference_texts,
        essence_texts: world.description_texts(&fact.subject, max_text_tokens),
    })
}

/// `n` records over distinct facts chosen uniformly at random.
pub fn build_records(world: &WorldModel, n: usize, seed: u64, max_text_tokens: usize) -> Result<Vec<CounterfactRecord>> {
    if n > world.facts.len() {
        return Err(Error::Infeasible(format!(
            "requested {n} records but the world has {} facts",
            world.facts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..world.facts.len()).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(case_id, i)| build_record(world, &world.facts[i], case_id, seed.wrapping_add(1 + case_id as u64), max_text_tokens))
        .collect()
}
