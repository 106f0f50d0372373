use rayon::prelude::*;

use romelab_core::tracing::{average_grids, select_known_prompts, trace_grid, AveragedGrid, TraceGrid, TraceSite};

use super::{load_checkpoint, load_world};
use crate::artifact::Workspace;
use crate::error::{CliError, Result};

/// Directory name of one tracing run under the trace directory.
pub fn trace_dir_name(site: TraceSite, disable_mlp: bool) -> String {
    let site = match site {
        TraceSite::Hidden => "hidden",
        TraceSite::Mlp => "mlp",
        TraceSite::Attn => "attn",
    };
    if disable_mlp {
        format!("{site}-mlp-disabled")
    } else {
        site.to_string()
    }
}

fn averaged_csv(avg: &AveragedGrid) -> String {
    let mut out = String::from("role,layer,effect,prompts\n");
    for ((role, row), count) in avg.roles.iter().zip(&avg.effects).zip(&avg.counts) {
        for (l, e) in row.iter().enumerate() {
            out.push_str(&format!("{},{l},{e},{count}\n", role.label()));
        }
    }
    out
}

/// Traces up to `trace.n_prompts` known prompts at `site` and writes each
/// grid plus their average, as JSON and CSV.
pub fn cmd_trace(ws: &Workspace, site: TraceSite, disable_mlp: bool) -> Result<AveragedGrid> {
    let world = load_world(ws)?;
    let (ckpt, _) = load_checkpoint(ws)?;
    let (params, config) = (&ckpt.parameters, &ckpt.config);
    let known = select_known_prompts(params, config, &world, ws.config.trace.n_prompts)?;
    if known.prompts.is_empty() {
        return Err(CliError::NoKnownPrompts);
    }
    if known.shortfall > 0 {
        log::warn!("trace: only {} known prompts ({} short)", known.prompts.len(), known.shortfall);
    }
    let tc = romelab_core::tracing::TraceConfig {
        site,
        disable_mlp,
        ..ws.config.trace.trace_config(params)
    };
    let grids: Vec<TraceGrid> = known
        .prompts
        .par_iter()
        .map(|p| trace_grid(params, config, p, &tc))
        .collect::<romelab_core::Result<_>>()?;
    let avg = average_grids(&grids)?;
    let dir = ws.config.paths.trace_dir.join(trace_dir_name(site, disable_mlp));
    let text = |t: usize| world.tokenizer.decode(&[t]);
    for (i, g) in grids.iter().enumerate() {
        ws.write(dir.join(format!("prompt_{i:03}.json")), g)?;
        ws.write_text(dir.join(format!("prompt_{i:03}.csv")), &g.to_csv(text))?;
    }
    ws.write(dir.join("averaged.json"), &avg)?;
    ws.write_text(dir.join("averaged.csv"), &averaged_csv(&avg))?;
    log::info!(
        "trace {}: {} prompts, noise {:.4}, clean {:.3}, corrupted {:.3}",
        trace_dir_name(site, disable_mlp),
        grids.len(),
        tc.noise_scale,
        avg.mean_clean_p,
        avg.mean_corrupted_p
    );
    Ok(avg)
}
