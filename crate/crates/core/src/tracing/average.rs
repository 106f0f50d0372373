use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::grid::{TraceGrid, TraceSite};
use super::TokenRole;

/// Effects averaged over prompts, aligned by token role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedGrid {
    pub site: TraceSite,
    pub disable_mlp: bool,
    pub n_grids: usize,
    pub roles: Vec<TokenRole>,
    /// `effects[role][layer]`: mean over prompts of the per-prompt mean of
    /// `restored_p − corrupted_p` across that prompt's tokens in the role.
    pub effects: Vec<Vec<f64>>,
    /// Prompts contributing to each role.
    pub counts: Vec<usize>,
    pub mean_clean_p: f64,
    pub mean_corrupted_p: f64,
}

impl AveragedGrid {
    /// Averaged effect row for `role`, if any prompt had that role.
    pub fn row(&self, role: TokenRole) -> Option<&[f64]> {
        self.roles.iter().position(|&r| r == role).map(|i| self.effects[i].as_slice())
    }
}

/// Buckets each grid's cells by (token role, layer), averages within the
/// prompt, then averages the per-prompt buckets across prompts.
pub fn average_grids(grids: &[TraceGrid]) -> Result<AveragedGrid> {
    let first = grids.first().ok_or(Error::Empty("trace grids"))?;
    let n_layers = first.n_layers();
    let mut sums = vec![vec![0.0; n_layers]; TokenRole::ALL.len()];
    let mut counts = vec![0usize; TokenRole::ALL.len()];
    for grid in grids {
        if grid.n_layers() != n_layers {
            return Err(Error::Dimension {
                context: "trace grid layers",
                expected: n_layers,
                actual: grid.n_layers(),
            });
        }
        for (ri, role) in TokenRole::ALL.iter().enumerate() {
            let tokens: Vec<usize> = (0..grid.tokens.len()).filter(|&i| grid.roles[i] == *role).collect();
            if tokens.is_empty() {
                continue;
            }
            counts[ri] += 1;
            for (layer, sum) in sums[ri].iter_mut().enumerate() {
                let bucket: f64 = tokens.iter().map(|&i| grid.effect(i, layer)).sum::<f64>() / tokens.len() as f64;
                *sum += bucket;
            }
        }
    }
    let mut roles = Vec::new();
    let mut effects = Vec::new();
    let mut kept_counts = Vec::new();
    for (ri, role) in TokenRole::ALL.iter().enumerate() {
        if counts[ri] == 0 {
            continue;
        }
        roles.push(*role);
        effects.push(sums[ri].iter().map(|s| s / counts[ri] as f64).collect());
        kept_counts.push(counts[ri]);
    }
    let n = grids.len() as f64;
    Ok(AveragedGrid {
        site: first.site,
        disable_mlp: first.disable_mlp,
        n_grids: grids.len(),
        roles,
        effects,
        counts: kept_counts,
        mean_clean_p: grids.iter().map(|g| g.clean_p).sum::<f64>() / n,
        mean_corrupted_p: grids.iter().map(|g| g.corrupted_p).sum::<f64>() / n,
    })
}
