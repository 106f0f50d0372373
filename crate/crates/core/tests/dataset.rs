mod common;

use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use romelab_core::dataset::lexicon::{ESSENCE_TEMPLATE, PERIOD, SUBJECT_KIND};
use romelab_core::dataset::*;
use romelab_core::Error;

fn default_world() -> WorldModel {
    generate_world(0, WorldSizes::default()).unwrap()
}

#[test]
fn default_world_has_two_hundred_unique_facts() {
    let world = default_world();
    world.validate().unwrap();
    assert_eq!(world.facts.len(), 200);
    assert_eq!(world.relations.len(), 5);
    let mut seen = HashSet::new();
    for f in &world.facts {
        assert!(seen.insert((f.subject.clone(), f.relation.clone())), "duplicate {f:?}");
    }
    for r in &world.relations {
        assert!(r.query_templates.len() >= 4 && r.generation_templates.len() >= 3);
        let subjects: HashSet<_> = world.facts.iter().filter(|f| f.relation == r.id).map(|f| &f.subject).collect();
        assert!(subjects.len() >= MIN_SUBJECTS_PER_RELATION);
        for o in &r.objects {
            assert!(world.subjects_with(&r.id, o).len() >= MIN_SUBJECTS_PER_OBJECT);
        }
    }
    for s in &world.subjects {
        let n = world.tokenizer.encode(s).unwrap().len();
        assert!((1..=3).contains(&n), "{s}");
    }
}

#[test]
fn subject_names_never_prefix_each_other() {
    let world = default_world();
    let tokens: Vec<Vec<usize>> = world.subjects.iter().map(|s| world.tokenizer.encode(s).unwrap()).collect();
    for (i, a) in tokens.iter().enumerate() {
        for (j, b) in tokens.iter().enumerate() {
            if i != j {
                assert!(!b.starts_with(a), "{} / {}", world.subjects[i], world.subjects[j]);
            }
        }
    }
}

#[test]
fn infeasible_sizes_are_errors() {
    let sizes = |n_entities, n_relations, facts_per_relation| WorldSizes {
        n_entities,
        n_relations,
        facts_per_relation,
    };
    for bad in [sizes(40, 0, 40), sizes(40, 99, 40), sizes(40, 5, 11), sizes(20, 5, 30)] {
        assert!(matches!(generate_world(0, bad), Err(Error::Infeasible(_))), "{bad:?}");
    }
}

#[test]
fn every_text_the_world_produces_tokenizes() {
    let world = default_world();
    for line in training_corpus(&world, 2, 2, 0, 32) {
        world.tokenizer.encode(&line).unwrap();
    }
    for r in build_records(&world, 50, 3, 32).unwrap() {
        let json = serde_json::to_string(&r).unwrap();
        let texts = r
            .paraphrase_prompts
            .iter()
            .chain(r.neighborhood_prompts.iter().map(|p| &p.prompt))
            .chain(&r.generation_prompts)
            .chain(&r.reference_texts)
            .chain(&r.essence_texts)
            .chain([&r.rewrite_prompt, &r.essence_prompt, &r.target_new, &r.target_true]);
        for t in texts {
            world.tokenizer.encode(t).unwrap_or_else(|e| panic!("{t:?}: {e} in {json}"));
        }
    }
}

#[test]
fn records_satisfy_their_invariants() {
    let world = default_world();
    let records = build_records(&world, 200, 11, 32).unwrap();
    for r in &records {
        assert_ne!(r.target_new, r.target_true);
        assert_eq!(world.object_of(&r.subject, &r.relation), Some(r.target_true.as_str()));
        assert!(r.rewrite_prompt.contains(&r.subject));
        assert_eq!(r.paraphrase_prompts.len(), N_PARAPHRASE);
        assert!(!r.paraphrase_prompts.contains(&r.rewrite_prompt));
        assert_eq!(r.neighborhood_prompts.len(), N_NEIGHBORHOOD);
        for n in &r.neighborhood_prompts {
            assert_ne!(n.subject, r.subject);
            assert_eq!(world.object_of(&n.subject, &r.relation), Some(r.target_true.as_str()));
            assert!(n.prompt.contains(&n.subject));
        }
        assert_eq!(r.generation_prompts.len(), 3);
        assert_eq!(r.essence_prompt, render(ESSENCE_TEMPLATE, &r.subject));
        assert!(!r.reference_texts.is_empty() && !r.essence_texts.is_empty());
        for t in r.reference_texts.iter().chain(&r.essence_texts) {
            assert!(t.split_whitespace().count() <= 32);
        }
        assert!(r.essence_texts.iter().any(|t| t.contains(&r.subject)));
        let rel = world.relation(&r.relation).unwrap();
        let rendered: Vec<String> = rel.query_templates.iter().map(|t| render(t, &r.subject)).collect();
        assert!(rendered.contains(&r.rewrite_prompt));
    }
    let ids: Vec<usize> = records.iter().map(|r| r.case_id).collect();
    assert_eq!(ids, (0..200).collect::<Vec<_>>());
}

#[test]
fn two_object_relations_always_swap() {
    let mut world = common::tiny_world();
    let rel = world.relations[0].id.clone();
    let objects = world.relations[0].objects.clone();
    let mut i = 0;
    for f in world.facts.iter_mut().filter(|f| f.relation == rel) {
        f.object = objects[i % 2].clone();
        i += 1;
    }
    world.relations[0].objects.truncate(2);
    for (k, fact) in world.facts.iter().filter(|f| f.relation == rel).enumerate() {
        let other = if fact.object == objects[0] { &objects[1] } else { &objects[0] };
        let record = build_record(&world, fact, k, k as u64, 32).unwrap();
        assert_eq!(&record.target_new, other);
    }
}

#[test]
fn new_objects_follow_world_frequencies() {
    let world = default_world();
    let fact = &world.facts[0];
    let freq = world.object_frequencies(&fact.relation);
    let total: usize = freq.iter().filter(|(o, _)| **o != fact.object).map(|(_, n)| n).sum();
    let draws = 10_000;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..draws {
        let r = build_record(&world, fact, 0, seed, 32).unwrap();
        *counts.entry(r.target_new).or_insert(0) += 1;
    }
    assert!(!counts.contains_key(&fact.object));
    for (o, n) in &freq {
        if *o == fact.object {
            continue;
        }
        let p = *n as f64 / total as f64;
        let expected = p * draws as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let got = *counts.get(o).unwrap_or(&0) as f64;
        assert!((got - expected).abs() <= 3.0 * sigma, "{o}: {got} vs {expected} ± {sigma}");
    }
}

#[test]
fn small_neighborhoods_are_reported() {
    let mut world = common::tiny_world();
    let rel = world.relations[0].clone();
    // Only one other subject shares the object: 1 × templates < 10 prompts.
    let members: Vec<usize> = (0..world.facts.len()).filter(|&i| world.facts[i].relation == rel.id).collect();
    for (k, &i) in members.iter().enumerate() {
        world.facts[i].object = if k < 2 { rel.objects[0].clone() } else { rel.objects[1].clone() };
    }
    let fact = world.facts[members[0]].clone();
    match build_record(&world, &fact, 0, 0, 32) {
        Err(Error::InsufficientNeighborhood { found, needed, .. }) => {
            assert_eq!(found, rel.query_templates.len());
            assert_eq!(needed, N_NEIGHBORHOOD);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn records_require_true_facts() {
    let world = default_world();
    let mut fake = world.facts[0].clone();
    fake.object = world.relation(&fake.relation).unwrap().objects.iter().find(|o| **o != fake.object).unwrap().clone();
    assert!(build_record(&world, &fake, 0, 0, 32).is_err());
    assert!(build_records(&world, 201, 0, 32).is_err());
}

#[test]
fn corpus_repeats_every_fact_and_never_states_counterfactuals() {
    let world = default_world();
    let n = 3;
    let statements = fact_statements(&world, n);
    let corpus = training_corpus(&world, n, 2, 5, 32).join(" ");
    let padded = format!(" {corpus} ");
    for fact in &world.facts {
        let rel = world.relation(&fact.relation).unwrap();
        let rendered: Vec<String> = rel
            .query_templates
            .iter()
            .chain(&rel.generation_templates)
            .map(|t| format!("{} {} {PERIOD}", render(t, &fact.subject), fact.object))
            .collect();
        let hits = statements.iter().filter(|s| rendered.contains(s)).count();
        assert!(hits >= n, "{fact:?}");
        let in_corpus: usize = rendered.iter().map(|s| padded.matches(&format!(" {s} ")).count()).sum();
        assert!(in_corpus >= n, "{fact:?}");
    }
    for r in build_records(&world, 200, 2, 32).unwrap() {
        let rel = world.relation(&r.relation).unwrap();
        for t in rel.query_templates.iter().chain(&rel.generation_templates) {
            let claim = format!(" {} {} ", render(t, &r.subject), r.target_new);
            assert!(!padded.contains(&claim), "{claim}");
        }
    }
    let kind = format!("{} {SUBJECT_KIND} {PERIOD}", render(ESSENCE_TEMPLATE, &world.subjects[0]));
    assert!(padded.contains(&kind));
}

#[test]
fn token_counts_match_an_independent_word_count() {
    let world = default_world();
    let corpus = training_corpus(&world, 2, 2, 4, 32);
    let mut by_word: HashMap<&str, usize> = HashMap::new();
    for line in &corpus {
        for w in line.split_whitespace() {
            *by_word.entry(w).or_insert(0) += 1;
        }
    }
    let mut by_id = vec![0usize; world.tokenizer.len()];
    for line in &corpus {
        for t in world.tokenizer.encode(line).unwrap() {
            by_id[t] += 1;
        }
    }
    for (id, count) in by_id.iter().enumerate() {
        let word = world.tokenizer.decode(&[id]);
        assert_eq!(*count, by_word.get(word.as_str()).copied().unwrap_or(0), "{word}");
    }
    for line in &corpus {
        assert!(line.split_whitespace().count() <= 32);
    }
}

#[test]
fn probes_cover_every_fact_and_template() {
    let world = default_world();
    let probes = fact_probes(&world).unwrap();
    let expected: usize = world
        .facts
        .iter()
        .map(|f| world.relation(&f.relation).unwrap().query_templates.len())
        .sum();
    assert_eq!(probes.len(), expected);
}

#[test]
fn subject_spans_are_found() {
    assert_eq!(find_subject_span(&[5, 1, 2, 3, 1, 2], &[1, 2]), Some((1, 2)));
    assert_eq!(find_subject_span(&[5, 1, 2], &[2, 5]), None);
    assert_eq!(find_subject_span(&[5], &[5, 5]), None);
    assert_eq!(find_subject_span(&[5], &[]), None);
}

#[test]
fn unknown_words_do_not_tokenize() {
    let world = default_world();
    assert!(world.tokenizer.encode("ba zzz").is_err());
    let mut words = world.tokenizer.words().to_vec();
    words.shuffle(&mut ChaCha8Rng::seed_from_u64(0));
    let text = words.join(" ");
    assert_eq!(world.tokenizer.decode(&world.tokenizer.encode(&text).unwrap()), text);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn worlds_are_pure_functions_of_seed_and_sizes(seed in any::<u64>(), relations in 1usize..=5, extra in 0usize..20) {
        let sizes = WorldSizes { n_entities: 14 + extra, n_relations: relations, facts_per_relation: 12 + extra / 2 };
        let a = generate_world(seed, sizes).unwrap();
        prop_assert_eq!(&a, &generate_world(seed, sizes).unwrap());
        a.validate().unwrap();
        prop_assert_eq!(a.facts.len(), relations * sizes.facts_per_relation);
        let records = build_records(&a, 5, seed, 32).unwrap();
        prop_assert_eq!(&records, &build_records(&a, 5, seed, 32).unwrap());
        for r in &records {
            prop_assert!(a.object_of(&r.subject, &r.relation) != Some(r.target_new.as_str()));
        }
    }
}
