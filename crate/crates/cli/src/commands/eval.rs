use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use romelab_core::dataset::CounterfactRecord;
use romelab_core::editor::EditMethod;
use romelab_core::metrics::{aggregate, evaluate_record, format_table, EvalOptions, MetricReport, RecordMetrics};
use romelab_core::model::{ModelConfig, Parameters};

use super::edit::{summary_path, EditStatus, EditSummary, EditedCheckpoint};
use super::{load_checkpoint, load_records, load_world, method_slug};
use crate::artifact::Workspace;
use crate::error::{CliError, Result};

/// Report directory name of the unedited model.
pub const BASELINE_SLUG: &str = "unedited";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub layer: Option<usize>,
    pub eps: Option<f64>,
    /// Records whose edit failed; they are scored on the unedited model.
    pub n_failed: usize,
    pub report: MetricReport,
}

impl EvalReport {
    pub fn table(&self) -> String {
        format_table(&[(self.label.clone(), self.report.clone())])
    }
}

/// Per-record metrics, in record order. `params_for` yields the model to
/// score each record on.
pub fn evaluate_records<'p, F>(
    config: &ModelConfig,
    tokenizer: &romelab_core::dataset::Tokenizer,
    records: &[CounterfactRecord],
    options: &EvalOptions,
    params_for: F,
) -> Result<Vec<RecordMetrics>>
where
    F: Fn(&CounterfactRecord) -> Result<std::borrow::Cow<'p, Parameters>> + Sync,
{
    records
        .par_iter()
        .map(|r| {
            let params = params_for(r)?;
            Ok(evaluate_record(&params, config, tokenizer, r, options)?)
        })
        .collect()
}

fn report_dir(ws: &Workspace, method: Option<EditMethod>) -> PathBuf {
    let slug = method.map_or_else(|| BASELINE_SLUG.to_string(), method_slug);
    ws.config.paths.reports_dir.join(slug)
}

/// Scores the edited checkpoints of `method` (the unedited model when
/// `None`) on the evaluation records and writes per-record metrics, the
/// aggregated report and its table.
pub fn cmd_eval(ws: &Workspace, method: Option<EditMethod>) -> Result<EvalReport> {
    let world = load_world(ws)?;
    let records = load_records(ws)?;
    let (ckpt, sha) = load_checkpoint(ws)?;
    let summary: Option<EditSummary> = method.map(|m| ws.read(summary_path(ws, m), "edit")).transpose()?;
    if let Some(s) = &summary {
        if s.base_sha256 != sha {
            return Err(CliError::Mismatch(format!("edits were made on checkpoint {}, not {sha}", s.base_sha256)));
        }
        let mut ids: Vec<usize> = s.outcomes.iter().map(|o| o.case_id).collect();
        let mut want: Vec<usize> = records.iter().map(|r| r.case_id).collect();
        ids.sort_unstable();
        want.sort_unstable();
        if ids != want {
            return Err(CliError::Mismatch("edit summary and records cover different cases".into()));
        }
    }
    let metrics = evaluate_records(&ckpt.config, &world.tokenizer, &records, &ws.config.eval, |r| {
        let Some(s) = &summary else {
            return Ok(std::borrow::Cow::Borrowed(&ckpt.parameters));
        };
        let outcome = s.outcomes.iter().find(|o| o.case_id == r.case_id).expect("coverage checked");
        match &outcome.status {
            EditStatus::Applied { file } => {
                let edited: EditedCheckpoint = ws.read(file, "edit")?;
                if edited.edit.case_id != r.case_id.to_string() {
                    return Err(CliError::Mismatch(format!("{} holds case {}", file.display(), edited.edit.case_id)));
                }
                Ok(std::borrow::Cow::Owned(edited.apply(&ckpt.parameters, &sha)?))
            }
            EditStatus::Failed { .. } => Ok(std::borrow::Cow::Borrowed(&ckpt.parameters)),
        }
    })?;
    let report = EvalReport {
        label: method.map_or("Unedited", |m| m.label()).to_string(),
        layer: summary.as_ref().map(|s| s.layer),
        eps: summary.as_ref().and_then(|s| s.eps),
        n_failed: summary.as_ref().map_or(0, EditSummary::n_failed),
        report: aggregate(&metrics)?,
    };
    let dir = report_dir(ws, method);
    ws.write(dir.join("records.json"), &metrics)?;
    ws.write(dir.join("report.json"), &report)?;
    ws.write_text(dir.join("report.txt"), &report.table())?;
    log::info!(
        "eval {}: ES {:.3} PS {:.3} NS {:.3} over {} records ({} failed edits)",
        report.label,
        report.report.es.mean,
        report.report.ps.mean,
        report.report.ns.mean,
        report.report.n_records,
        report.n_failed
    );
    Ok(report)
}
