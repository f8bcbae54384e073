//! Policy and predictor sequence models.
//!
//! Both are pre-norm causal transformers over per-step feature rows; they
//! differ only in their input width and output head. See [`tokens`] for the
//! row layout.

mod checkpoint;
mod forward;
mod session;
pub mod tokens;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use forward::{forward_graph, head_outputs, policy_forward, predictor_forward};
pub use session::Session;
pub use tokens::{encode_policy_tokens, encode_predictor_tokens, TokenSequence};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Softmax over arms.
    ActionLogits,
    /// Unbounded per-arm reward estimates.
    RewardVector,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub num_arms: usize,
    pub max_seq_len: usize,
    pub head_kind: HeadKind,
    /// Whether every input row also carries a predicted reward vector.
    #[serde(default)]
    pub prediction_features: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_arms == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("num_arms and max_seq_len must be positive".into()));
        }
        if self.head_kind == HeadKind::RewardVector && self.prediction_features {
            return Err(Error::Config("the predictor cannot consume its own predictions".into()));
        }
        Ok(())
    }

    /// Checks that a `horizon`-step episode fits (one query row plus one row per step).
    pub fn check_horizon(&self, horizon: usize) -> Result<()> {
        if self.max_seq_len < horizon + 1 {
            return Err(Error::Config(format!(
                "max_seq_len {} too short for horizon {horizon}",
                self.max_seq_len
            )));
        }
        Ok(())
    }

    /// Width of one input row.
    pub fn feature_dim(&self) -> usize {
        self.num_arms + 1 + if self.prediction_features { self.num_arms } else { 0 }
    }

    /// Parameter names and shapes in declaration order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let mut out = vec![
            ("input.weight".to_string(), vec![self.feature_dim(), d]),
            ("input.bias".to_string(), vec![1, d]),
            ("position.embedding".to_string(), vec![self.max_seq_len, d]),
        ];
        for l in 0..self.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            out.extend([
                (p("ln1.gain"), vec![1, d]),
                (p("ln1.bias"), vec![1, d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![1, 3 * d]),
                (p("attn.out.weight"), vec![d, d]),
                (p("attn.out.bias"), vec![1, d]),
                (p("ln2.gain"), vec![1, d]),
                (p("ln2.bias"), vec![1, d]),
                (p("mlp.fc.weight"), vec![d, 4 * d]),
                (p("mlp.fc.bias"), vec![1, 4 * d]),
                (p("mlp.proj.weight"), vec![4 * d, d]),
                (p("mlp.proj.bias"), vec![1, d]),
            ]);
        }
        out.extend([
            ("final.ln.gain".to_string(), vec![1, d]),
            ("final.ln.bias".to_string(), vec![1, d]),
            ("head.weight".to_string(), vec![d, self.num_arms]),
            ("head.bias".to_string(), vec![1, self.num_arms]),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

pub(crate) const PER_LAYER: usize = 12;
pub(crate) const LAYER_OFFSET: usize = 3;

/// Weights of one model in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "{name}: expected shape {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (String, &Tensor)> {
        self.config.param_shapes().into_iter().map(|(n, _)| n).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let idx = self.config.param_shapes().iter().position(|(n, _)| n == name)?;
        self.tensors.get_mut(idx)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

/// Gaussian initialization with std 0.02 for projections and embeddings,
/// zero offsets and unit gains.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = rng_for(seed, &[0x1417]);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let tensors = config
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            if name.ends_with(".gain") {
                Tensor::filled(shape, 1.0)
            } else if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let len = shape.iter().product();
                let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("shape matches")
            }
        })
        .collect();
    ModelParams::from_tensors(config.clone(), tensors)
}

#[cfg(test)]
mod tests;
