use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{all_finite, Matrix};

use super::config::ModelConfig;

/// Weights of one transformer block. Linear maps are stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub attn_query: Matrix,
    pub attn_key: Matrix,
    pub attn_value: Matrix,
    pub attn_out: Matrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// `W_fc`, D×H.
    pub mlp_fc: Matrix,
    /// `W_proj`, H×D.
    pub mlp_proj: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    /// `W_e`, |V|×H. Also the readout when embeddings are tied.
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
    /// Separate readout, present only for untied models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unembedding: Option<Matrix>,
}

/// Names one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "tensor", content = "layer", rename_all = "snake_case")]
pub enum TensorId {
    TokenEmbedding,
    PositionEmbedding,
    Unembedding,
    FinalGain,
    FinalBias,
    Ln1Gain(usize),
    Ln1Bias(usize),
    AttnQuery(usize),
    AttnKey(usize),
    AttnValue(usize),
    AttnOut(usize),
    Ln2Gain(usize),
    Ln2Bias(usize),
    MlpFc(usize),
    MlpProj(usize),
}

impl TensorId {
    pub fn layer(&self) -> Option<usize> {
        use TensorId::*;
        match *self {
            Ln1Gain(l) | Ln1Bias(l) | AttnQuery(l) | AttnKey(l) | AttnValue(l) | AttnOut(l)
            | Ln2Gain(l) | Ln2Bias(l) | MlpFc(l) | MlpProj(l) => Some(l),
            _ => None,
        }
    }
}

/// A set of tensors to differentiate or update.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSelector(pub Vec<TensorId>);

impl ParamSelector {
    pub fn none() -> Self {
        Self(Vec::new())
    }

    pub fn mlp_proj(layer: usize) -> Self {
        Self(vec![TensorId::MlpProj(layer)])
    }

    /// Query, key and value projections of every head at one layer.
    pub fn attention_qkv(layer: usize) -> Self {
        Self(vec![
            TensorId::AttnQuery(layer),
            TensorId::AttnKey(layer),
            TensorId::AttnValue(layer),
        ])
    }

    pub fn all(params: &Parameters) -> Self {
        Self(params.tensor_ids())
    }

    pub fn contains(&self, id: TensorId) -> bool {
        self.0.contains(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Parameters {
    /// GPT-2 style initialization: N(0, 0.02) weights, residual output
    /// projections scaled by `1/√(2L)`, unit gains, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let mut gaussian = |rows: usize, cols: usize, sd: f64| {
            let dist = Normal::new(0.0, sd).expect("positive std");
            Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
        };
        let (h, d, v, t) = (config.hidden, config.mlp_dim, config.vocab_size, config.max_context);
        let token_embedding = gaussian(v, h, std);
        let position_embedding = gaussian(t, h, std / 2.0);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gain: vec![1.0; h],
                ln1_bias: vec![0.0; h],
                attn_query: gaussian(h, h, std),
                attn_key: gaussian(h, h, std),
                attn_value: gaussian(h, h, std),
                attn_out: gaussian(h, h, resid_std),
                ln2_gain: vec![1.0; h],
                ln2_bias: vec![0.0; h],
                mlp_fc: gaussian(d, h, std),
                mlp_proj: gaussian(h, d, resid_std),
            })
            .collect();
        let unembedding = (!config.tie_embeddings).then(|| gaussian(v, h, std));
        Ok(Self {
            token_embedding,
            position_embedding,
            layers,
            final_gain: vec![1.0; h],
            final_bias: vec![0.0; h],
            unembedding,
        })
    }

    /// Dense random parameters with O(1) activations: weights
    /// `N(0, scale/√fan_in)`, gains `1 + N(0, scale/4)`, biases
    /// `N(0, scale/4)`. Used for gradient probes and benchmarks.
    pub fn random(config: &ModelConfig, seed: u64, scale: f64) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for id in params.tensor_ids() {
            use TensorId::*;
            let (offset, sd) = match id {
                Ln1Gain(_) | Ln2Gain(_) | FinalGain => (1.0, scale / 4.0),
                Ln1Bias(_) | Ln2Bias(_) | FinalBias => (0.0, scale / 4.0),
                MlpProj(_) => (0.0, scale / (config.mlp_dim as f64).sqrt()),
                TokenEmbedding | PositionEmbedding | Unembedding => (0.0, scale),
                _ => (0.0, scale / (config.hidden as f64).sqrt()),
            };
            for x in params.tensor_mut(id)? {
                *x = offset + sd * unit.sample(&mut rng);
            }
        }
        Ok(params)
    }

    /// All-zero tensors with the shapes of `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let (h, d, v, t) = (config.hidden, config.mlp_dim, config.vocab_size, config.max_context);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gain: vec![0.0; h],
                ln1_bias: vec![0.0; h],
                attn_query: Matrix::zeros(h, h),
                attn_key: Matrix::zeros(h, h),
                attn_value: Matrix::zeros(h, h),
                attn_out: Matrix::zeros(h, h),
                ln2_gain: vec![0.0; h],
                ln2_bias: vec![0.0; h],
                mlp_fc: Matrix::zeros(d, h),
                mlp_proj: Matrix::zeros(h, d),
            })
            .collect();
        Self {
            token_embedding: Matrix::zeros(v, h),
            position_embedding: Matrix::zeros(t, h),
            layers,
            final_gain: vec![0.0; h],
            final_bias: vec![0.0; h],
            unembedding: (!config.tie_embeddings).then(|| Matrix::zeros(v, h)),
        }
    }

    /// Every tensor id present, in a fixed canonical order.
    pub fn tensor_ids(&self) -> Vec<TensorId> {
        use TensorId::*;
        let mut ids = vec![TokenEmbedding, PositionEmbedding];
        for l in 0..self.layers.len() {
            ids.extend([
                Ln1Gain(l),
                Ln1Bias(l),
                AttnQuery(l),
                AttnKey(l),
                AttnValue(l),
                AttnOut(l),
                Ln2Gain(l),
                Ln2Bias(l),
                MlpFc(l),
                MlpProj(l),
            ]);
        }
        ids.extend([FinalGain, FinalBias]);
        if self.unembedding.is_some() {
            ids.push(Unembedding);
        }
        ids
    }

    pub fn tensor(&self, id: TensorId) -> Result<&[f64]> {
        use TensorId::*;
        if let Some(l) = id.layer() {
            let lp = self.layers.get(l).ok_or(Error::Bounds {
                what: "layer",
                index: l,
                limit: self.layers.len(),
            })?;
            return Ok(match id {
                Ln1Gain(_) => &lp.ln1_gain,
                Ln1Bias(_) => &lp.ln1_bias,
                AttnQuery(_) => lp.attn_query.as_slice(),
                AttnKey(_) => lp.attn_key.as_slice(),
                AttnValue(_) => lp.attn_value.as_slice(),
                AttnOut(_) => lp.attn_out.as_slice(),
                Ln2Gain(_) => &lp.ln2_gain,
                Ln2Bias(_) => &lp.ln2_bias,
                MlpFc(_) => lp.mlp_fc.as_slice(),
                MlpProj(_) => lp.mlp_proj.as_slice(),
                _ => unreachable!("layer tensors only"),
            });
        }
        Ok(match id {
            TokenEmbedding => self.token_embedding.as_slice(),
            PositionEmbedding => self.position_embedding.as_slice(),
            Unembedding => self
                .unembedding
                .as_ref()
                .ok_or_else(|| Error::Config("model has tied embeddings".into()))?
                .as_slice(),
            FinalGain => &self.final_gain,
            FinalBias => &self.final_bias,
            _ => unreachable!("global tensors only"),
        })
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> Result<&mut [f64]> {
        use TensorId::*;
        if let Some(l) = id.layer() {
            let limit = self.layers.len();
            let lp = self.layers.get_mut(l).ok_or(Error::Bounds {
                what: "layer",
                index: l,
                limit,
            })?;
            return Ok(match id {
                Ln1Gain(_) => &mut lp.ln1_gain,
                Ln1Bias(_) => &mut lp.ln1_bias,
                AttnQuery(_) => lp.attn_query.as_mut_slice(),
                AttnKey(_) => lp.attn_key.as_mut_slice(),
                AttnValue(_) => lp.attn_value.as_mut_slice(),
                AttnOut(_) => lp.attn_out.as_mut_slice(),
                Ln2Gain(_) => &mut lp.ln2_gain,
                Ln2Bias(_) => &mut lp.ln2_bias,
                MlpFc(_) => lp.mlp_fc.as_mut_slice(),
                MlpProj(_) => lp.mlp_proj.as_mut_slice(),
                _ => unreachable!("layer tensors only"),
            });
        }
        Ok(match id {
            TokenEmbedding => self.token_embedding.as_mut_slice(),
            PositionEmbedding => self.position_embedding.as_mut_slice(),
            Unembedding => self
                .unembedding
                .as_mut()
                .ok_or_else(|| Error::Config("model has tied embeddings".into()))?
                .as_mut_slice(),
            FinalGain => &mut self.final_gain,
            FinalBias => &mut self.final_bias,
            _ => unreachable!("global tensors only"),
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.tensor_ids()
            .into_iter()
            .map(|id| self.tensor(id).map_or(0, <[f64]>::len))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensor_ids()
            .into_iter()
            .all(|id| self.tensor(id).map_or(true, all_finite))
    }

    /// Checks every tensor against the shapes implied by `config`.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        config.validate()?;
        let (h, d, v, t) = (config.hidden, config.mlp_dim, config.vocab_size, config.max_context);
        let shape = |ctx: &'static str, m: &Matrix, r: usize, c: usize| -> Result<()> {
            check_dim(ctx, r, m.rows())?;
            check_dim(ctx, c, m.cols())
        };
        shape("token_embedding", &self.token_embedding, v, h)?;
        shape("position_embedding", &self.position_embedding, t, h)?;
        check_dim("n_layers", config.n_layers, self.layers.len())?;
        for lp in &self.layers {
            for g in [&lp.ln1_gain, &lp.ln1_bias, &lp.ln2_gain, &lp.ln2_bias] {
                check_dim("layer norm", h, g.len())?;
            }
            for m in [&lp.attn_query, &lp.attn_key, &lp.attn_value, &lp.attn_out] {
                shape("attention projection", m, h, h)?;
            }
            shape("mlp_fc", &lp.mlp_fc, d, h)?;
            shape("mlp_proj", &lp.mlp_proj, h, d)?;
        }
        check_dim("final_gain", h, self.final_gain.len())?;
        check_dim("final_bias", h, self.final_bias.len())?;
        match (&self.unembedding, config.tie_embeddings) {
            (None, true) => {}
            (Some(u), false) => shape("unembedding", u, v, h)?,
            _ => return Err(Error::Config("unembedding presence disagrees with tie_embeddings".into())),
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }

    /// Readout matrix `|V|×H`.
    pub fn readout(&self) -> &Matrix {
        self.unembedding.as_ref().unwrap_or(&self.token_embedding)
    }

    /// Root mean square of the token-embedding entries.
    pub fn embedding_rms(&self) -> f64 {
        let s = self.token_embedding.as_slice();
        (s.iter().map(|v| v * v).sum::<f64>() / s.len().max(1) as f64).sqrt()
    }

    /// Tensor ids whose contents differ bitwise between two parameter sets.
    pub fn changed_tensors(&self, other: &Parameters) -> Vec<TensorId> {
        self.tensor_ids()
            .into_iter()
            .filter(|&id| match (self.tensor(id), other.tensor(id)) {
                (Ok(a), Ok(b)) => a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()),
                _ => true,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_matches_config_and_is_deterministic() {
        let cfg = ModelConfig {
            vocab_size: 20,
            ..ModelConfig::default()
        };
        let a = Parameters::init(&cfg, 3).unwrap();
        a.validate(&cfg).unwrap();
        assert_eq!(a, Parameters::init(&cfg, 3).unwrap());
        assert_ne!(a, Parameters::init(&cfg, 4).unwrap());
    }

    #[test]
    fn tensor_access_round_trips() {
        let cfg = ModelConfig {
            n_layers: 2,
            hidden: 8,
            mlp_dim: 16,
            n_heads: 2,
            vocab_size: 5,
            max_context: 6,
            tie_embeddings: false,
            ..ModelConfig::default()
        };
        let mut p = Parameters::zeros(&cfg);
        let ids = p.tensor_ids();
        assert!(ids.contains(&TensorId::Unembedding));
        for (i, id) in ids.iter().enumerate() {
            p.tensor_mut(*id).unwrap()[0] = i as f64 + 1.0;
        }
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(p.tensor(*id).unwrap()[0], i as f64 + 1.0);
        }
        assert!(p.tensor(TensorId::MlpProj(2)).is_err());
        assert_eq!(p.changed_tensors(&p.clone()), vec![]);
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            hidden: 10,
            n_heads: 4,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            vocab_size: 1,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
