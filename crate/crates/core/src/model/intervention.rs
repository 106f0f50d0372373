use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

use super::config::ModelConfig;

/// Where a patch acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Adds the payload to the input embedding `h⁽⁰⁾_i` (layer must be 0).
    EmbeddingNoise,
    /// Replaces the output `h⁽ˡ⁾_i` of block `l`.
    Hidden,
    /// Replaces the MLP output `m⁽ˡ⁾_i`.
    MlpOut,
    /// Replaces the attention output `a⁽ˡ⁾_i`.
    AttnOut,
    /// Pins `m⁽ˡ⁾_i` to a value recorded elsewhere (typically a corrupted
    /// run). An `MlpOut` patch at the same position takes precedence.
    MlpFreeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub site: Site,
    pub token: usize,
    pub layer: usize,
    pub payload: Vec<f64>,
}

impl Patch {
    pub fn new(site: Site, token: usize, layer: usize, payload: Vec<f64>) -> Self {
        Self {
            site,
            token,
            layer,
            payload,
        }
    }
}

/// A list of activation patches applied during one forward pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionSet {
    patches: Vec<Patch>,
}

impl InterventionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, patch: Patch) -> Self {
        self.patches.push(patch);
        self
    }

    pub fn push(&mut self, patch: Patch) {
        self.patches.push(patch);
    }

    pub fn extend(&mut self, patches: impl IntoIterator<Item = Patch>) {
        self.patches.extend(patches);
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    /// Checks indices, payload sizes and uniqueness per `(site, token, layer)`.
    pub fn validate(&self, config: &ModelConfig, n_tokens: usize) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.patches {
            if p.token >= n_tokens {
                return Err(Error::Bounds {
                    what: "patch token",
                    index: p.token,
                    limit: n_tokens,
                });
            }
            if p.layer >= config.n_layers || (p.site == Site::EmbeddingNoise && p.layer != 0) {
                return Err(Error::Bounds {
                    what: "patch layer",
                    index: p.layer,
                    limit: if p.site == Site::EmbeddingNoise { 1 } else { config.n_layers },
                });
            }
            check_dim("patch payload", config.hidden, p.payload.len())?;
            if !seen.insert((p.site, p.token, p.layer)) {
                return Err(Error::ConflictingPatch(format!(
                    "{:?} token {} layer {}",
                    p.site, p.token, p.layer
                )));
            }
        }
        Ok(())
    }

    /// Indices of patches at `(site, layer)`.
    pub(crate) fn indices_at(&self, site: Site, layer: usize) -> impl Iterator<Item = usize> + '_ {
        self.patches
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.site == site && p.layer == layer)
            .map(|(i, _)| i)
    }

    /// Lowest layer any patch touches (embedding noise counts as layer 0).
    pub(crate) fn min_layer(&self) -> Option<usize> {
        self.patches.iter().map(|p| p.layer).min()
    }
}
