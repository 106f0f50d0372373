//! A small GPT-style autoregressive transformer with full activation
//! capture, activation patching, reverse-mode gradients, training, sampling
//! and perplexity.

mod backward;
mod checkpoint;
mod config;
mod forward;
mod intervention;
mod loss;
mod ops;
mod optim;
mod params;
mod sample;
mod train;

pub use backward::{backward, Gradients};
pub use checkpoint::{Checkpoint, EditProvenance};
pub use config::{ModelConfig, Nonlinearity, Wiring};
pub use forward::{forward, forward_with, ForwardTrace, Readout};
pub(crate) use forward::resume_last_distribution;
pub use intervention::{InterventionSet, Patch, Site};
pub use loss::{
    batch_loss, batch_loss_and_grad, grad_wrt_activation, grad_wrt_params, kl_divergence, kl_from_log,
    loss_grad_for_spec, ActivationSite, LossSpec, TensorGrad,
};
pub use ops::{gelu, gelu_grad, log_softmax, softmax};
pub use optim::{clamp_to_ball, Adam, AdamConfig};
pub use params::{LayerParams, ParamSelector, Parameters, TensorId};
pub use sample::{generate, perplexity, sample_top_k, target_probability, Sampler};
pub use train::{argmax, next_token_accuracy, probe_accuracy, probe_recalled, train, Probe, TrainSchedule, TrainingMeta};
