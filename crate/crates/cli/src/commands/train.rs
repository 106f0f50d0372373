use std::path::PathBuf;

use romelab_core::dataset::fact_probes;
use romelab_core::editor::collect_key_statistics;
use romelab_core::model::{train, Checkpoint, ModelConfig, Parameters, TrainingMeta};
use romelab_core::numerics::CovarianceCache;

use super::{load_corpus, load_world};
use crate::artifact::Workspace;
use crate::error::Result;

/// Relative path of the key statistics of `layer`.
pub fn covariance_path(ws: &Workspace, layer: usize) -> PathBuf {
    ws.config.paths.covariance_dir.join(format!("layer_{layer}.json"))
}

/// Trains the model on the corpus, then caches `Σ k kᵀ` over the corpus
/// for every layer.
pub fn cmd_train(ws: &Workspace) -> Result<TrainingMeta> {
    let world = load_world(ws)?;
    let corpus = load_corpus(ws, &world)?;
    let config = ModelConfig {
        vocab_size: world.tokenizer.len(),
        ..ws.config.model.clone()
    };
    config.validate()?;
    let init = Parameters::init(&config, ws.config.seed)?;
    let probes = fact_probes(&world)?;
    let (params, meta) = train(&init, &config, &corpus, &probes, &ws.config.train)?;
    if meta.reached_target {
        log::info!("train: {} epochs, probe accuracy {:.4}", meta.epochs, meta.probe_accuracy);
    } else {
        log::warn!(
            "train: target accuracy not reached after {} epochs (probe accuracy {:.4})",
            meta.epochs,
            meta.probe_accuracy
        );
    }
    let layers: Vec<usize> = (0..config.n_layers).collect();
    let stats = collect_key_statistics(&params, &config, &corpus, &layers)?;
    let checkpoint = Checkpoint::new(config, params, ws.config.seed, meta.clone());
    ws.write(&ws.config.paths.checkpoint, &checkpoint)?;
    for (layer, acc) in stats.iter().enumerate() {
        ws.write(covariance_path(ws, layer), &CovarianceCache::from_accumulator(layer, acc))?;
    }
    Ok(meta)
}
