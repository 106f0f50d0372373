use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::lexicon::{ESSENCE_TEMPLATE, PERIOD, RELATIONS, SUBJECT_KIND, SYLLABLES};
use super::tokenizer::Tokenizer;

/// Fewest subjects a relation may have.
pub const MIN_SUBJECTS_PER_RELATION: usize = 12;
/// Fewest subjects sharing any one object.
pub const MIN_SUBJECTS_PER_OBJECT: usize = 4;
const MAX_OBJECTS_PER_RELATION: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub query_templates: Vec<String>,
    pub generation_templates: Vec<String>,
    /// Objects actually used by this relation's facts.
    pub objects: Vec<String>,
}

/// One ground-truth tuple `(s, r, o)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldSizes {
    pub n_entities: usize,
    pub n_relations: usize,
    pub facts_per_relation: usize,
}

impl Default for WorldSizes {
    fn default() -> Self {
        Self {
            n_entities: 40,
            n_relations: 5,
            facts_per_relation: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldModel {
    pub seed: u64,
    pub sizes: WorldSizes,
    pub subjects: Vec<String>,
    pub relations: Vec<Relation>,
    pub facts: Vec<Fact>,
    pub tokenizer: Tokenizer,
}

/// Fills `{}` in a template with `subject`.
pub fn render(template: &str, subject: &str) -> String {
    template.replacen("{}", subject, 1)
}

/// Number of subjects per object: at least [`MIN_SUBJECTS_PER_OBJECT`]
/// each, the remainder split by Zipf weights `1/(rank+1)` with largest
/// remainders.
fn object_counts(n_subjects: usize, n_objects: usize) -> Vec<usize> {
    let base = MIN_SUBJECTS_PER_OBJECT;
    let spare = n_subjects - base * n_objects;
    let weights: Vec<f64> = (0..n_objects).map(|r| 1.0 / (r + 1) as f64).collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| spare as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n_objects).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + base).collect()
}

/// Builds a deterministic world of synthetic subjects, relations and facts.
pub fn generate_world(seed: u64, sizes: WorldSizes) -> Result<WorldModel> {
    let WorldSizes {
        n_entities,
        n_relations,
        facts_per_relation,
    } = sizes;
    let infeasible = |msg: String| Err(Error::Infeasible(msg));
    if n_relations == 0 || n_relations > RELATIONS.len() {
        return infeasible(format!("n_relations must be in 1..={}", RELATIONS.len()));
    }
    if facts_per_relation < MIN_SUBJECTS_PER_RELATION {
        return infeasible(format!(
            "facts_per_relation must be >= {MIN_SUBJECTS_PER_RELATION} so every fact has a neighborhood"
        ));
    }
    if facts_per_relation > n_entities {
        return infeasible(format!(
            "facts_per_relation ({facts_per_relation}) exceeds n_entities ({n_entities})"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = subject_names(n_entities, &mut rng)?;

    let mut relations = Vec::with_capacity(n_relations);
    let mut facts = Vec::with_capacity(n_relations * facts_per_relation);
    for bp in &RELATIONS[..n_relations] {
        let n_objects = (facts_per_relation / MIN_SUBJECTS_PER_OBJECT).min(MAX_OBJECTS_PER_RELATION);
        let mut pool: Vec<&str> = bp.objects.to_vec();
        pool.shuffle(&mut rng);
        pool.truncate(n_objects);
        let mut members: Vec<&String> = subjects.iter().collect();
        members.shuffle(&mut rng);
        members.truncate(facts_per_relation);
        let counts = object_counts(facts_per_relation, n_objects);
        let mut assigned = Vec::with_capacity(facts_per_relation);
        for (obj, &count) in pool.iter().zip(&counts) {
            assigned.extend(std::iter::repeat_n(*obj, count));
        }
        let mut relation_facts: Vec<Fact> = members
            .iter()
            .zip(&assigned)
            .map(|(s, o)| Fact {
                subject: (*s).clone(),
                relation: bp.id.to_string(),
                object: o.to_string(),
            })
            .collect();
        relation_facts.sort_by(|a, b| a.subject.cmp(&b.subject));
        facts.extend(relation_facts);
        relations.push(Relation {
            id: bp.id.to_string(),
            query_templates: bp.query_templates.iter().map(|s| s.to_string()).collect(),
            generation_templates: bp.generation_templates.iter().map(|s| s.to_string()).collect(),
            objects: pool.iter().map(|s| s.to_string()).collect(),
        });
    }

    let mut words: Vec<String> = vec![PERIOD.to_string()];
    words.extend(SYLLABLES.iter().map(|s| s.to_string()));
    let template_words = relations
        .iter()
        .flat_map(|r| r.query_templates.iter().chain(&r.generation_templates))
        .chain(std::iter::once(&ESSENCE_TEMPLATE.to_string()))
        .flat_map(|t| t.split_whitespace().filter(|w| *w != "{}").map(str::to_string).collect::<Vec<_>>())
        .collect::<Vec<_>>();
    words.extend(template_words);
    words.push(SUBJECT_KIND.to_string());
    words.extend(relations.iter().flat_map(|r| r.objects.clone()));
    let tokenizer = Tokenizer::from_words(words);

    Ok(WorldModel {
        seed,
        sizes,
        subjects,
        relations,
        facts,
        tokenizer,
    })
}

/// Distinct 2–3 syllable names, none a token-prefix of another.
fn subject_names(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    let mut names: Vec<Vec<&str>> = Vec::with_capacity(n);
    let mut seen = BTreeSet::new();
    let mut attempts = 0;
    while names.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(Error::Infeasible(format!("cannot draw {n} distinct subject names")));
        }
        let len = rng.random_range(2..=3);
        let name: Vec<&str> = (0..len).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
        let clash = names
            .iter()
            .any(|other| other.starts_with(&name) || name.starts_with(other.as_slice()));
        if clash || !seen.insert(name.clone()) {
            continue;
        }
        names.push(name);
    }
    Ok(names.into_iter().map(|n| n.join(" ")).collect())
}

impl WorldModel {
    pub fn relation(&self, id: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.id == id)
    }

    /// The object of `(subject, relation)`, if the world has that fact.
    pub fn object_of(&self, subject: &str, relation: &str) -> Option<&str> {
        self.facts
            .iter()
            .find(|f| f.subject == subject && f.relation == relation)
            .map(|f| f.object.as_str())
    }

    /// Subjects holding `(·, relation, object)`, in world order.
    pub fn subjects_with(&self, relation: &str, object: &str) -> Vec<&str> {
        self.facts
            .iter()
            .filter(|f| f.relation == relation && f.object == object)
            .map(|f| f.subject.as_str())
            .collect()
    }

    /// How many facts of `relation` have each object.
    pub fn object_frequencies(&self, relation: &str) -> BTreeMap<String, usize> {
        let mut freq = BTreeMap::new();
        for f in self.facts.iter().filter(|f| f.relation == relation) {
            *freq.entry(f.object.clone()).or_insert(0) += 1;
        }
        freq
    }

    /// `"s is a person ."` followed by one `"s template o ."` sentence per
    /// fact of `subject`, using the relation's first generation template.
    pub fn description_sentences(&self, subject: &str) -> Vec<String> {
        let kind = format!("{} {SUBJECT_KIND} {PERIOD}", render(ESSENCE_TEMPLATE, subject));
        std::iter::once(kind)
            .chain(self.facts.iter().filter(|f| f.subject == subject).filter_map(|f| {
                let rel = self.relation(&f.relation)?;
                Some(format!("{} {} {}", render(&rel.generation_templates[0], subject), f.object, PERIOD))
            }))
            .collect()
    }

    /// Description of `subject` split into texts of at most `max_tokens`
    /// tokens, whole sentences each.
    pub fn description_texts(&self, subject: &str, max_tokens: usize) -> Vec<String> {
        let mut texts = Vec::new();
        let mut current: Vec<String> = Vec::new();
        let mut current_len = 0;
        for sentence in self.description_sentences(subject) {
            let len = sentence.split_whitespace().count();
            if current_len + len > max_tokens && !current.is_empty() {
                texts.push(current.join(" "));
                current.clear();
                current_len = 0;
            }
            current_len += len;
            current.push(sentence);
        }
        if !current.is_empty() {
            texts.push(current.join(" "));
        }
        texts
    }

    /// Checks the structural invariants of a world.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        let mut pairs = BTreeSet::new();
        for f in &self.facts {
            if !pairs.insert((&f.subject, &f.relation)) {
                return bad(format!("duplicate fact for ({}, {})", f.subject, f.relation));
            }
        }
        for r in &self.relations {
            if r.query_templates.len() < 4 || r.generation_templates.len() < 3 {
                return bad(format!("relation {} has too few templates", r.id));
            }
            for t in r.query_templates.iter().chain(&r.generation_templates) {
                if t.matches("{}").count() != 1 {
                    return bad(format!("template {t:?} must have exactly one subject slot"));
                }
            }
            let n = self.facts.iter().filter(|f| f.relation == r.id).count();
            if n < MIN_SUBJECTS_PER_RELATION {
                return bad(format!("relation {} has only {n} subjects", r.id));
            }
        }
        Ok(())
    }
}
