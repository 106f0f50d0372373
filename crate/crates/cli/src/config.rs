use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use romelab_core::dataset::WorldSizes;
use romelab_core::editor::{FineTuneSchedule, KeyPlan, RomeConfig, VStarConfig};
use romelab_core::metrics::{EvalOptions, GenerationSettings};
use romelab_core::model::{AdamConfig, ModelConfig, TrainSchedule};
use romelab_core::tracing::TraceConfig;

use crate::error::{CliError, Result};

/// Environment variable naming the directory all artifacts go under.
pub const OUTPUT_ROOT_VAR: &str = "ROMELAB_OUT";

/// One experiment, end to end. Every command reads the same document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// World seed and parameter-init seed; derived seeds are offsets of it.
    pub seed: u64,
    pub world: WorldSizes,
    pub corpus: CorpusSettings,
    /// `vocab_size` is replaced by the world's vocabulary size.
    pub model: ModelConfig,
    pub train: TrainSchedule,
    pub trace: TraceSettings,
    pub records: RecordSettings,
    pub key_plan: KeyPlan,
    pub rome: RomeConfig,
    pub baselines: BaselineSettings,
    pub eval: EvalOptions,
    pub sweep: SweepSettings,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldSizes::default(),
            corpus: CorpusSettings::default(),
            model: ModelConfig::default(),
            train: TrainSchedule {
                max_epochs: 60,
                adam: AdamConfig::with_lr(3e-3),
                batch_size: 16,
                target_accuracy: 0.999,
                ..TrainSchedule::default()
            },
            trace: TraceSettings::default(),
            records: RecordSettings::default(),
            key_plan: KeyPlan::default(),
            rome: RomeConfig {
                v_star: VStarConfig {
                    lr: 0.25,
                    max_steps: 300,
                    ..VStarConfig::default()
                },
                realize_in_prompt: true,
            },
            baselines: BaselineSettings::default(),
            eval: EvalOptions {
                generation: Some(GenerationSettings::default()),
                essence: true,
            },
            sweep: SweepSettings::default(),
            paths: Paths::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub statements_per_fact: usize,
    pub profiles_per_subject: usize,
    pub max_tokens: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            statements_per_fact: 8,
            profiles_per_subject: 24,
            max_tokens: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSettings {
    pub n_prompts: usize,
    /// Explicit `ν`; when absent `ν = noise_multiplier × RMS embedding entry`.
    pub noise_scale: Option<f64>,
    pub noise_multiplier: f64,
    pub n_noise_repeats: usize,
    pub window_width: usize,
    pub base_seed: u64,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self {
            n_prompts: 100,
            noise_scale: None,
            noise_multiplier: 3.0,
            n_noise_repeats: 10,
            window_width: 10,
            base_seed: 0,
        }
    }
}

impl TraceSettings {
    pub fn noise_for(&self, params: &romelab_core::model::Parameters) -> f64 {
        self.noise_scale.unwrap_or(self.noise_multiplier * params.embedding_rms())
    }

    pub fn trace_config(&self, params: &romelab_core::model::Parameters) -> TraceConfig {
        TraceConfig {
            noise_scale: self.noise_for(params),
            n_noise_repeats: self.n_noise_repeats,
            window_width: self.window_width,
            base_seed: self.base_seed,
            ..TraceConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordSettings {
    /// Evaluation records.
    pub n_records: usize,
    /// Extra records, disjoint from the evaluation ones, used by sweeps and
    /// ε calibration.
    pub n_sweep_records: usize,
    pub seed: u64,
    pub max_text_tokens: usize,
}

impl Default for RecordSettings {
    fn default() -> Self {
        Self {
            n_records: 100,
            n_sweep_records: 50,
            seed: 7,
            max_text_tokens: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    /// Rank-one and MLP fine-tuning layer; absent means the layer with the
    /// largest single-layer MLP restoration effect at the last subject token.
    pub edit_layer: Option<usize>,
    /// Attention fine-tuning layer; absent means the layer with the largest
    /// single-layer attention restoration effect at the last token.
    pub attn_layer: Option<usize>,
    pub schedule: FineTuneSchedule,
    /// Fixed clamps; absent means the calibrated value is required.
    pub ft_l_eps: Option<f64>,
    pub attn_eps: Option<f64>,
    pub calibration: Calibration,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            edit_layer: None,
            attn_layer: None,
            schedule: FineTuneSchedule::default(),
            ft_l_eps: None,
            attn_eps: None,
            calibration: Calibration::default(),
        }
    }
}

/// Log-space bisection for the smallest clamp whose efficacy reaches
/// `target_es` on the sweep records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub target_es: f64,
    pub lo: f64,
    pub hi: f64,
    pub iterations: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            target_es: 0.95,
            lo: 1e-4,
            hi: 1e-1,
            iterations: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    /// Layers to sweep; empty means every layer.
    pub layers: Vec<usize>,
    /// Clamp values for FT+L and AttnEdit; ignored by the unclamped methods.
    pub eps: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            layers: Vec::new(),
            eps: vec![0.005, 0.01, 0.02, 0.05],
        }
    }
}

/// Artifact locations, relative to the output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub world: PathBuf,
    pub corpus: PathBuf,
    pub records: PathBuf,
    pub sweep_records: PathBuf,
    pub checkpoint: PathBuf,
    pub covariance_dir: PathBuf,
    pub layers: PathBuf,
    pub trace_dir: PathBuf,
    pub edits_dir: PathBuf,
    pub reports_dir: PathBuf,
    pub sweeps_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            world: "world.json".into(),
            corpus: "corpus.json".into(),
            records: "records.json".into(),
            sweep_records: "sweep_records.json".into(),
            checkpoint: "checkpoint.json".into(),
            covariance_dir: "covariance".into(),
            layers: "layers.json".into(),
            trace_dir: "trace".into(),
            edits_dir: "edits".into(),
            reports_dir: "reports".into(),
            sweeps_dir: "sweeps".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Overrides `key.path = value` pairs, the value parsed as JSON (bare
    /// words are taken as strings).
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(&self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .ok_or_else(|| CliError::Config(format!("unknown config field {key:?}")))?;
            }
            *slot = value;
        }
        serde_json::from_value(doc).map_err(|e| CliError::Config(format!("after overrides: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.n_records < 2 {
            return Err(CliError::Config("n_records must be >= 2 to report intervals".into()));
        }
        let c = &self.baselines.calibration;
        if !(c.lo > 0.0 && c.hi > c.lo && (0.0..=1.0).contains(&c.target_es)) {
            return Err(CliError::Config("calibration needs 0 < lo < hi and target_es in [0, 1]".into()));
        }
        self.key_plan.validate()?;
        self.rome.v_star.validate()?;
        Ok(())
    }
}
