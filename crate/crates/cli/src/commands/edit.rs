use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use romelab_core::dataset::{lexicon::PERIOD, CounterfactRecord, WorldModel};
use romelab_core::editor::{fine_tune, rome_edit, sample_prefixes, EditMethod, EditRequest, FineTuneMode};
use romelab_core::model::{Checkpoint, EditProvenance, Parameters, TensorId};
use romelab_core::numerics::{auto_ridge, CovarianceCache, Matrix};

use super::sweep::calibration_path;
use super::train::covariance_path;
use super::{load_checkpoint, load_records, load_world, resolve_layers, LayerChoice};
use crate::artifact::Workspace;
use crate::error::{CliError, Result};

/// Directory-safe name of a method (`rome`, `ft`, `ft-l`, `attn-edit`).
pub fn method_slug(method: EditMethod) -> String {
    serde_json::to_value(method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .expect("methods serialize as strings")
}

/// An edited model stored as the tensors that differ from its base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedCheckpoint {
    pub base_sha256: String,
    pub edit: EditProvenance,
    pub tensors: Vec<(TensorId, Vec<f64>)>,
}

impl EditedCheckpoint {
    pub fn diff(base: &Parameters, edited: &Parameters, base_sha256: &str, edit: EditProvenance) -> Result<Self> {
        let tensors = base
            .changed_tensors(edited)
            .into_iter()
            .map(|id| Ok((id, edited.tensor(id)?.to_vec())))
            .collect::<romelab_core::Result<_>>()?;
        Ok(Self {
            base_sha256: base_sha256.to_string(),
            edit,
            tensors,
        })
    }

    /// The full edited parameters. Fails when `base_sha256` names another
    /// checkpoint.
    pub fn apply(&self, base: &Parameters, base_sha256: &str) -> Result<Parameters> {
        if self.base_sha256 != base_sha256 {
            return Err(CliError::Mismatch(format!(
                "edit of case {} was made on checkpoint {}, not {base_sha256}",
                self.edit.case_id, self.base_sha256
            )));
        }
        let mut out = base.clone();
        for (id, values) in &self.tensors {
            let slot = out.tensor_mut(*id)?;
            if slot.len() != values.len() {
                return Err(CliError::Mismatch(format!("tensor {id:?} has {} values, expected {}", values.len(), slot.len())));
            }
            slot.copy_from_slice(values);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EditStatus {
    Applied { file: PathBuf },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    pub case_id: usize,
    #[serde(flatten)]
    pub status: EditStatus,
}

/// Index of one batch of edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSummary {
    pub method: EditMethod,
    pub layer: usize,
    pub eps: Option<f64>,
    pub base_sha256: String,
    pub outcomes: Vec<EditOutcome>,
}

impl EditSummary {
    pub fn n_failed(&self) -> usize {
        self.outcomes.iter().filter(|o| matches!(o.status, EditStatus::Failed { .. })).count()
    }
}

/// Everything edits of one checkpoint share.
#[derive(Debug, Clone)]
pub struct EditContext {
    pub world: WorldModel,
    pub checkpoint: Checkpoint,
    pub checkpoint_sha256: String,
    pub layers: LayerChoice,
    pub prefixes: Vec<Vec<usize>>,
}

impl EditContext {
    pub fn load(ws: &Workspace) -> Result<Self> {
        let world = load_world(ws)?;
        let (checkpoint, checkpoint_sha256) = load_checkpoint(ws)?;
        let layers = resolve_layers(ws, &world, &checkpoint, &checkpoint_sha256)?;
        let period = world
            .tokenizer
            .id(PERIOD)
            .ok_or_else(|| romelab_core::Error::UnknownToken(PERIOD.into()))?;
        let prefixes = sample_prefixes(&checkpoint.parameters, &checkpoint.config, &ws.config.key_plan, period)?;
        Ok(Self {
            world,
            checkpoint,
            checkpoint_sha256,
            layers,
            prefixes,
        })
    }

    /// Default layer of `method`.
    pub fn layer_for(&self, method: EditMethod) -> usize {
        match method {
            EditMethod::AttnEdit => self.layers.attn_layer,
            _ => self.layers.edit_layer,
        }
    }
}

/// Ridge-regularized key second moment of `layer`, from the cache that
/// training wrote.
pub fn load_covariance(ws: &Workspace, layer: usize) -> Result<Matrix> {
    let cache: CovarianceCache = ws.read(covariance_path(ws, layer), "train")?;
    let acc = cache.into_accumulator()?;
    let (c, _) = auto_ridge(&acc.finalize(0.0)?);
    Ok(c)
}

/// Clamp used by `method`: none for the unclamped editors, else the
/// configured value or the calibrated one.
pub fn clamp_for(ws: &Workspace, method: EditMethod) -> Result<Option<f64>> {
    let fixed = match method {
        EditMethod::Rome | EditMethod::Ft => return Ok(None),
        EditMethod::FtL => ws.config.baselines.ft_l_eps,
        EditMethod::AttnEdit => ws.config.baselines.attn_eps,
    };
    match fixed {
        Some(eps) => Ok(Some(eps)),
        None => {
            let cal: super::CalibrationResult = ws.read(calibration_path(ws, method), "sweep --calibrate")?;
            Ok(Some(cal.eps))
        }
    }
}

fn fine_tune_mode(method: EditMethod) -> Option<FineTuneMode> {
    match method {
        EditMethod::Rome => None,
        EditMethod::Ft => Some(FineTuneMode::Ft),
        EditMethod::FtL => Some(FineTuneMode::FtL),
        EditMethod::AttnEdit => Some(FineTuneMode::AttnEdit),
    }
}

/// One edit applied to a fresh copy of the checkpoint. `covariance` is
/// required for rank-one edits; `eps` for the clamped baselines.
pub fn edit_record(
    ws: &Workspace,
    ctx: &EditContext,
    method: EditMethod,
    record: &CounterfactRecord,
    layer: usize,
    eps: Option<f64>,
    covariance: Option<&Matrix>,
) -> Result<(Parameters, EditProvenance)> {
    let (params, config) = (&ctx.checkpoint.parameters, &ctx.checkpoint.config);
    let request = EditRequest::from_record(record, layer).encode(&ctx.world.tokenizer, config)?;
    let (edited, details) = match fine_tune_mode(method) {
        None => {
            let c = covariance.ok_or_else(|| CliError::Missing {
                path: ws.path(covariance_path(ws, layer)),
                command: "train",
            })?;
            let (edited, result) = rome_edit(params, config, &request, &ctx.prefixes, &ws.config.rome, c)?;
            (edited, json!({ "rome": ws.config.rome, "result": result }))
        }
        Some(mode) => {
            let eps = eps.unwrap_or(0.0);
            let schedule = &ws.config.baselines.schedule;
            let r = fine_tune(params, config, &request, layer, mode, eps, schedule)?;
            let details = json!({
                "eps": if mode.is_clamped() { Some(eps) } else { None },
                "schedule": schedule,
                "steps": r.steps,
                "best_loss": r.best_loss,
                "converged": r.converged,
                "loss_trajectory": r.loss_trajectory,
            });
            (r.params, details)
        }
    };
    let provenance = EditProvenance {
        method: method.label().to_string(),
        case_id: record.case_id.to_string(),
        layer,
        details,
    };
    Ok((edited, provenance))
}

/// Relative path of the edited checkpoint of `case_id`.
pub fn edited_path(ws: &Workspace, method: EditMethod, case_id: usize) -> PathBuf {
    ws.config.paths.edits_dir.join(method_slug(method)).join(format!("case_{case_id:03}.json"))
}

pub fn summary_path(ws: &Workspace, method: EditMethod) -> PathBuf {
    ws.config.paths.edits_dir.join(method_slug(method)).join("summary.json")
}

/// Edits every evaluation record independently and writes one edited
/// checkpoint per record plus a summary. Failed records are logged and
/// listed, never fatal.
pub fn cmd_edit(ws: &Workspace, method: EditMethod) -> Result<EditSummary> {
    let ctx = EditContext::load(ws)?;
    let records = load_records(ws)?;
    let layer = ctx.layer_for(method);
    let eps = clamp_for(ws, method)?;
    let covariance = match method {
        EditMethod::Rome => Some(load_covariance(ws, layer)?),
        _ => None,
    };
    let outcomes: Vec<EditOutcome> = records
        .par_iter()
        .map(|record| {
            let status = edit_record(ws, &ctx, method, record, layer, eps, covariance.as_ref())
                .and_then(|(edited, provenance)| {
                    let stored = EditedCheckpoint::diff(&ctx.checkpoint.parameters, &edited, &ctx.checkpoint_sha256, provenance)?;
                    let file = edited_path(ws, method, record.case_id);
                    ws.write(&file, &stored)?;
                    Ok(EditStatus::Applied { file })
                })
                .unwrap_or_else(|e| {
                    log::warn!("edit {} case {}: {e}", method.label(), record.case_id);
                    EditStatus::Failed { error: e.to_string() }
                });
            EditOutcome {
                case_id: record.case_id,
                status,
            }
        })
        .collect();
    let summary = EditSummary {
        method,
        layer,
        eps,
        base_sha256: ctx.checkpoint_sha256.clone(),
        outcomes,
    };
    ws.write(summary_path(ws, method), &summary)?;
    log::info!(
        "edit {}: layer {layer}, eps {eps:?}, {} of {} records failed",
        method.label(),
        summary.n_failed(),
        records.len()
    );
    Ok(summary)
}
