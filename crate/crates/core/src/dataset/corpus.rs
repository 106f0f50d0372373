use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::Probe;

use super::lexicon::{ESSENCE_TEMPLATE, PERIOD, SUBJECT_KIND};
use super::world::{render, Fact, WorldModel};

/// `"{s} {template} {o} ."` sentences, `n_statements_per_fact` per fact,
/// cycling through the relation's query and generation templates.
pub fn fact_statements(world: &WorldModel, n_statements_per_fact: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(world.facts.len() * n_statements_per_fact);
    for fact in &world.facts {
        let Some(rel) = world.relation(&fact.relation) else {
            continue;
        };
        let templates: Vec<&String> = rel.query_templates.iter().chain(&rel.generation_templates).collect();
        for i in 0..n_statements_per_fact {
            let t = templates[i % templates.len()];
            out.push(format!("{} {} {}", render(t, &fact.subject), fact.object, PERIOD));
        }
    }
    out
}

/// `"{s} {o₁} {o₂} … ."` lines listing every object of a subject right
/// after its name, in a random order per line.
pub fn profile_statements(world: &WorldModel, n_profiles_per_subject: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::new();
    for subject in &world.subjects {
        let mut objects: Vec<&str> = world
            .facts
            .iter()
            .filter(|f| &f.subject == subject)
            .map(|f| f.object.as_str())
            .collect();
        for _ in 0..n_profiles_per_subject {
            objects.shuffle(rng);
            out.push(format!("{subject} {} {PERIOD}", objects.join(" ")));
        }
    }
    out
}

/// `"{s} is a person ."`, `n_per_subject` times per subject.
pub fn kind_statements(world: &WorldModel, n_per_subject: usize) -> Vec<String> {
    world
        .subjects
        .iter()
        .flat_map(|s| std::iter::repeat_n(format!("{} {SUBJECT_KIND} {PERIOD}", render(ESSENCE_TEMPLATE, s)), n_per_subject))
        .collect()
}

/// Shuffled training lines, each packing one to three statements within
/// `max_tokens` tokens. Only true facts are ever rendered.
pub fn training_corpus(
    world: &WorldModel,
    n_statements_per_fact: usize,
    n_profiles_per_subject: usize,
    seed: u64,
    max_tokens: usize,
) -> Vec<String> {
    let mut statements = fact_statements(world, n_statements_per_fact);
    statements.extend(kind_statements(world, n_statements_per_fact));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    statements.extend(profile_statements(world, n_profiles_per_subject, &mut rng));
    statements.shuffle(&mut rng);
    let mut lines = Vec::new();
    let mut iter = statements.into_iter().peekable();
    while let Some(first) = iter.next() {
        let want = rng.random_range(1..=3);
        let mut len = first.split_whitespace().count();
        let mut line = first;
        for _ in 1..want {
            let Some(next) = iter.peek() else { break };
            let extra = next.split_whitespace().count();
            if len + extra > max_tokens {
                break;
            }
            len += extra;
            line.push(' ');
            line.push_str(&iter.next().expect("peeked"));
        }
        lines.push(line);
    }
    lines
}

/// Query prompt for `fact` under its relation's `template`-th query
/// template.
pub fn fact_prompt(world: &WorldModel, fact: &Fact, template: usize) -> Option<String> {
    let rel = world.relation(&fact.relation)?;
    rel.query_templates.get(template).map(|t| render(t, &fact.subject))
}

/// Recall probes for every fact under every query template.
pub fn fact_probes(world: &WorldModel) -> Result<Vec<Probe>> {
    let mut probes = Vec::new();
    for fact in &world.facts {
        let n = world.relation(&fact.relation).map_or(0, |r| r.query_templates.len());
        for t in 0..n {
            let prompt = fact_prompt(world, fact, t).expect("template in range");
            probes.push(Probe {
                prompt: world.tokenizer.encode(&prompt)?,
                target: world.tokenizer.encode(&fact.object)?,
            });
        }
    }
    Ok(probes)
}
