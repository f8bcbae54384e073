//! Unified run configuration: dataset generation, model shapes, training and
//! evaluation in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{GenConfig, DEFAULT_NUM_ENVS};
use crate::error::{Error, Result};
use crate::eval::SweepConfig;
use crate::training::{ModelShape, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: GenConfig,
    pub policy_model: ModelShape,
    pub predictor_model: ModelShape,
    pub train: TrainConfig,
    pub eval: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: GenConfig::ideal(DEFAULT_NUM_ENVS, 0),
            policy_model: ModelShape::default(),
            predictor_model: ModelShape::default(),
            train: TrainConfig::default(),
            eval: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Pretty JSON with fields in declaration order.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        for shape in [&self.policy_model, &self.predictor_model] {
            shape
                .policy_config(self.data.num_arms, self.data.horizon, self.train.algorithm)
                .validate()?;
        }
        Ok(())
    }

    /// Uses one seed for data generation, training and evaluation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_canonical_json();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"train": {"lambda": 500.0, "steps": 10}}"#).unwrap();
        assert_eq!(cfg.train.lambda, 500.0);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.eval.sigma2, vec![0.3, 0.5, 0.9]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_json(r#"{"trian": {}}"#), Err(Error::Config(_))));
        assert!(RunConfig::from_json(r#"{"train": {"lamda": 1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"eval": {"sigma": [0.3]}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"lambda": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"policy_model": {"num_heads": 5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"eval": {"sigma2": []}}"#).is_err());
    }

    #[test]
    fn seed_applies_everywhere() {
        let cfg = RunConfig::default().with_seed(9);
        assert_eq!((cfg.data.seed, cfg.train.seed, cfg.eval.seed), (9, 9, 9));
    }
}
