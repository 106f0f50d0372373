//! A synthetic world of subjects, relations and facts, its training corpus,
//! and counterfactual edit records built from it.

mod corpus;
pub mod lexicon;
mod record;
mod tokenizer;
mod world;

pub use corpus::{fact_probes, fact_prompt, fact_statements, kind_statements, profile_statements, training_corpus};
pub use record::{build_record, build_records, CounterfactRecord, SubjectPrompt, N_NEIGHBORHOOD, N_PARAPHRASE};
pub use tokenizer::Tokenizer;
pub use world::{
    generate_world, render, Fact, Relation, WorldModel, WorldSizes, MIN_SUBJECTS_PER_OBJECT, MIN_SUBJECTS_PER_RELATION,
};

/// Token span `[first, last]` (inclusive) of the first occurrence of
/// `subject` inside `tokens`.
pub fn find_subject_span(tokens: &[usize], subject: &[usize]) -> Option<(usize, usize)> {
    if subject.is_empty() || subject.len() > tokens.len() {
        return None;
    }
    tokens
        .windows(subject.len())
        .position(|w| w == subject)
        .map(|a| (a, a + subject.len() - 1))
}
