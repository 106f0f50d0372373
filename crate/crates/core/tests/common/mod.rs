#![allow(dead_code)]

use std::sync::OnceLock;

use romelab_core::dataset::{fact_probes, generate_world, training_corpus, WorldModel, WorldSizes};
use romelab_core::model::{train, AdamConfig, ModelConfig, Parameters, TrainSchedule};

pub fn tiny_world() -> WorldModel {
    generate_world(
        3,
        WorldSizes {
            n_entities: 14,
            n_relations: 2,
            facts_per_relation: 12,
        },
    )
    .unwrap()
}

pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        hidden: 32,
        mlp_dim: 64,
        n_heads: 2,
        vocab_size,
        max_context: 32,
        ..ModelConfig::default()
    }
}

pub fn corpus(world: &WorldModel) -> Vec<Vec<usize>> {
    training_corpus(world, 8, 8, 1, 32)
        .iter()
        .map(|line| world.tokenizer.encode(line).unwrap())
        .collect()
}

/// The tiny world with a two-layer model trained until it recalls 90% of
/// its facts. Trained once per test binary.
pub fn trained() -> &'static (WorldModel, ModelConfig, Parameters) {
    static CELL: OnceLock<(WorldModel, ModelConfig, Parameters)> = OnceLock::new();
    CELL.get_or_init(|| {
        let world = tiny_world();
        let config = tiny_config(world.tokenizer.len());
        let schedule = TrainSchedule {
            max_epochs: 150,
            adam: AdamConfig::with_lr(1e-2),
            warmup_steps: 20,
            target_accuracy: 0.9,
            ..TrainSchedule::default()
        };
        let init = Parameters::init(&config, 0).unwrap();
        let (params, meta) = train(&init, &config, &corpus(&world), &fact_probes(&world).unwrap(), &schedule).unwrap();
        assert!(meta.reached_target, "fixture did not learn its world: {meta:?}");
        (world, config, params)
    })
}
