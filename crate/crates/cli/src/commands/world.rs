use romelab_core::dataset::{build_records, generate_world, training_corpus, WorldModel};

use crate::artifact::Workspace;
use crate::error::Result;

/// Writes the world, its training corpus, the evaluation records and the
/// disjoint sweep records.
pub fn cmd_world(ws: &Workspace) -> Result<WorldModel> {
    let cfg = &ws.config;
    let world = generate_world(cfg.seed, cfg.world)?;
    world.validate()?;
    let corpus = training_corpus(
        &world,
        cfg.corpus.statements_per_fact,
        cfg.corpus.profiles_per_subject,
        cfg.seed.wrapping_add(1),
        cfg.corpus.max_tokens,
    );
    let r = &cfg.records;
    let mut records = build_records(&world, r.n_records + r.n_sweep_records, r.seed, r.max_text_tokens)?;
    let sweep = records.split_off(r.n_records);
    ws.write(&cfg.paths.world, &world)?;
    ws.write(&cfg.paths.corpus, &corpus)?;
    ws.write(&cfg.paths.records, &records)?;
    ws.write(&cfg.paths.sweep_records, &sweep)?;
    log::info!(
        "world: {} subjects, {} facts, vocabulary {}, {} corpus lines, {} + {} records",
        world.subjects.len(),
        world.facts.len(),
        world.tokenizer.len(),
        corpus.len(),
        records.len(),
        sweep.len()
    );
    Ok(world)
}
