//! One function per subcommand, plus the loaders they share.

mod edit;
mod eval;
mod layers;
mod sweep;
mod trace;
mod train;
mod world;

pub use edit::{cmd_edit, edit_record, method_slug, EditContext, EditOutcome, EditStatus, EditSummary, EditedCheckpoint};
pub use eval::{cmd_eval, evaluate_records, EvalReport, BASELINE_SLUG};
pub use layers::{resolve_layers, LayerChoice};
pub use sweep::{cmd_calibrate, cmd_sweep, CalibrationResult, SweepPoint};
pub use trace::{cmd_trace, trace_dir_name};
pub use train::{cmd_train, covariance_path};
pub use world::cmd_world;

use romelab_core::dataset::{CounterfactRecord, WorldModel};
use romelab_core::model::Checkpoint;

use crate::artifact::{sha256_hex, Workspace};
use crate::error::Result;

pub fn load_world(ws: &Workspace) -> Result<WorldModel> {
    let world: WorldModel = ws.read(&ws.config.paths.world, "world")?;
    world.validate()?;
    Ok(world)
}

pub fn load_corpus(ws: &Workspace, world: &WorldModel) -> Result<Vec<Vec<usize>>> {
    let lines: Vec<String> = ws.read(&ws.config.paths.corpus, "world")?;
    Ok(lines.iter().map(|l| world.tokenizer.encode(l)).collect::<romelab_core::Result<_>>()?)
}

pub fn load_records(ws: &Workspace) -> Result<Vec<CounterfactRecord>> {
    ws.read(&ws.config.paths.records, "world")
}

pub fn load_sweep_records(ws: &Workspace) -> Result<Vec<CounterfactRecord>> {
    ws.read(&ws.config.paths.sweep_records, "world")
}

/// The trained checkpoint and the SHA-256 of its file.
pub fn load_checkpoint(ws: &Workspace) -> Result<(Checkpoint, String)> {
    let bytes = ws.read_bytes(&ws.config.paths.checkpoint, "train")?;
    let artifact: crate::artifact::Artifact<Checkpoint> = serde_json::from_slice(&bytes)?;
    artifact.payload.validate()?;
    Ok((artifact.payload, sha256_hex(&bytes)))
}
