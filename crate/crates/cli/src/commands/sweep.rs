use std::borrow::Cow;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use romelab_core::dataset::CounterfactRecord;
use romelab_core::editor::EditMethod;
use romelab_core::metrics::{aggregate, format_table, EvalOptions, MetricReport, RecordMetrics};
use romelab_core::numerics::Matrix;

use super::edit::{edit_record, load_covariance, EditContext};
use super::{evaluate_records, load_sweep_records, method_slug};
use crate::artifact::Workspace;
use crate::error::{CliError, Result};

/// Metric means of one `(layer, ε)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub layer: usize,
    pub eps: Option<f64>,
    pub n_failed: usize,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: EditMethod,
    pub layer: usize,
    pub target_es: f64,
    /// Smallest clamp found whose efficacy reached the target (the upper
    /// bound when none did).
    pub eps: f64,
    pub es: f64,
    pub reached: bool,
    /// `(ε, ES)` in evaluation order.
    pub history: Vec<(f64, f64)>,
}

pub fn calibration_path(ws: &Workspace, method: EditMethod) -> PathBuf {
    ws.config.paths.sweeps_dir.join(format!("{}-calibration.json", method_slug(method)))
}

/// Edits and scores `records` in memory with the probability metrics.
/// Failed edits are scored on the unedited model and counted.
pub fn run_point(
    ws: &Workspace,
    ctx: &EditContext,
    method: EditMethod,
    records: &[CounterfactRecord],
    layer: usize,
    eps: Option<f64>,
    covariance: Option<&Matrix>,
) -> Result<(Vec<RecordMetrics>, usize)> {
    let failed = std::sync::atomic::AtomicUsize::new(0);
    let base = &ctx.checkpoint.parameters;
    let metrics = evaluate_records(&ctx.checkpoint.config, &ctx.world.tokenizer, records, &EvalOptions::default(), |r| {
        match edit_record(ws, ctx, method, r, layer, eps, covariance) {
            Ok((edited, _)) => Ok(Cow::Owned(edited)),
            Err(e) => {
                log::warn!("sweep {} case {}: {e}", method.label(), r.case_id);
                failed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                Ok(Cow::Borrowed(base))
            }
        }
    })?;
    Ok((metrics, failed.into_inner()))
}

fn point_label(p: &SweepPoint) -> String {
    match p.eps {
        Some(eps) => format!("layer {} eps {eps}", p.layer),
        None => format!("layer {}", p.layer),
    }
}

/// Edit and evaluation on the sweep records at every grid point: each
/// configured layer (all layers when none are listed) times each ε for the
/// clamped editors.
pub fn cmd_sweep(ws: &Workspace, method: EditMethod) -> Result<Vec<SweepPoint>> {
    let ctx = EditContext::load(ws)?;
    let records = load_sweep_records(ws)?;
    let layers: Vec<usize> = if ws.config.sweep.layers.is_empty() {
        (0..ctx.checkpoint.config.n_layers).collect()
    } else {
        ws.config.sweep.layers.clone()
    };
    let eps_grid: Vec<Option<f64>> = match method {
        EditMethod::FtL | EditMethod::AttnEdit => ws.config.sweep.eps.iter().copied().map(Some).collect(),
        _ => vec![None],
    };
    if layers.is_empty() || eps_grid.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let mut points = Vec::new();
    for &layer in &layers {
        let covariance = match method {
            EditMethod::Rome => Some(load_covariance(ws, layer)?),
            _ => None,
        };
        for &eps in &eps_grid {
            let (metrics, n_failed) = run_point(ws, &ctx, method, &records, layer, eps, covariance.as_ref())?;
            let point = SweepPoint {
                layer,
                eps,
                n_failed,
                report: aggregate(&metrics)?,
            };
            log::info!("sweep {} {}: ES {:.3} PS {:.3} NS {:.3}", method.label(), point_label(&point), point.report.es.mean, point.report.ps.mean, point.report.ns.mean);
            points.push(point);
        }
    }
    let dir = &ws.config.paths.sweeps_dir;
    let slug = method_slug(method);
    ws.write(dir.join(format!("{slug}.json")), &points)?;
    let rows: Vec<(String, MetricReport)> = points.iter().map(|p| (point_label(p), p.report.clone())).collect();
    ws.write_text(dir.join(format!("{slug}.txt")), &format_table(&rows))?;
    Ok(points)
}

/// Log-space bisection on the sweep records for the smallest clamp whose
/// mean efficacy reaches the configured target.
pub fn cmd_calibrate(ws: &Workspace, method: EditMethod) -> Result<CalibrationResult> {
    if !matches!(method, EditMethod::FtL | EditMethod::AttnEdit) {
        return Err(CliError::Config(format!("{} has no clamp to calibrate", method.label())));
    }
    let ctx = EditContext::load(ws)?;
    let records = load_sweep_records(ws)?;
    let layer = ctx.layer_for(method);
    let cal = &ws.config.baselines.calibration;
    let mut history = Vec::new();
    let mut es_at = |eps: f64| -> Result<f64> {
        let (metrics, _) = run_point(ws, &ctx, method, &records, layer, Some(eps), None)?;
        let es = aggregate(&metrics)?.es.mean;
        log::info!("calibrate {}: eps {eps:.5} ES {es:.3}", method.label());
        history.push((eps, es));
        Ok(es)
    };
    let (mut lo, mut hi) = (cal.lo, cal.hi);
    let mut hi_es = es_at(hi)?;
    let reached = hi_es >= cal.target_es;
    if reached {
        for _ in 0..cal.iterations {
            let mid = (lo * hi).sqrt();
            let es = es_at(mid)?;
            if es >= cal.target_es {
                hi = mid;
                hi_es = es;
            } else {
                lo = mid;
            }
        }
    } else {
        log::warn!("calibrate {}: ES {hi_es:.3} below target even at eps {hi}", method.label());
    }
    let result = CalibrationResult {
        method,
        layer,
        target_es: cal.target_es,
        eps: hi,
        es: hi_es,
        reached,
        history,
    };
    ws.write(calibration_path(ws, method), &result)?;
    Ok(result)
}
