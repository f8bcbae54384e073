//! Pretraining objectives and the alternating predictor/policy loop.

mod losses;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamWConfig, OptimizerState};
use crate::bandit::{Episode, ProxyEstimator, PretrainDataset};
use crate::error::{Error, Result};
use crate::models::{init_params, save_checkpoint, HeadKind, ModelConfig, ModelParams};
use crate::seed::{derive_seed, rng_for};

pub use losses::{
    curiosity_vector, curiosity_vectors, dpt_loss, policy_objective, ppt_policy_loss, predict_batch, predictor_loss,
    ContextTarget, LossOutput, PerPosition, PolicyLoss, PredictorLoss,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Policy only, trained on the optimal-arm likelihood.
    Dpt,
    /// Policy conditioned on predictor outputs, with the curiosity bonus.
    Ppt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    #[default]
    JointAlternating,
    PretrainedFrozen,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    GroundTruth,
    Proxy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Optimizer steps (each step updates the predictor, then the policy).
    pub steps: usize,
    /// Episodes per gradient shard; shards may run in parallel and are reduced
    /// in a fixed order.
    pub shard_size: usize,
    pub predictor_mode: PredictorMode,
    pub context_mode: ContextMode,
    pub proxy_estimator: ProxyEstimator,
    pub seed: u64,
    /// Write checkpoints every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Stop once the epoch-average policy loss changes by less than
    /// `convergence_tol` for `convergence_epochs` consecutive epochs.
    pub stop_on_convergence: bool,
    pub convergence_tol: f64,
    pub convergence_epochs: usize,
    /// Abort when a loss stays above `divergence_factor` times its first
    /// value for `divergence_patience` consecutive steps.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppt,
            lambda: 200.0,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            steps: 2000,
            shard_size: 32,
            predictor_mode: PredictorMode::JointAlternating,
            context_mode: ContextMode::GroundTruth,
            proxy_estimator: ProxyEstimator::HorizonMean,
            seed: 0,
            checkpoint_every: 0,
            stop_on_convergence: false,
            convergence_tol: 1e-4,
            convergence_epochs: 3,
            divergence_factor: 10.0,
            divergence_patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.shard_size == 0 {
            return Err(Error::Config("batch_size and shard_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn context_target(&self) -> ContextTarget {
        match self.context_mode {
            ContextMode::GroundTruth => ContextTarget::GroundTruth,
            ContextMode::Proxy => ContextTarget::Proxy(self.proxy_estimator),
        }
    }

    /// Figure-style label, e.g. `DPT`, `PPT_200.0` or `PPT_200.0_proxy`.
    pub fn label(&self) -> String {
        match (self.algorithm, self.context_mode) {
            (Algorithm::Dpt, _) => "DPT".into(),
            (Algorithm::Ppt, ContextMode::GroundTruth) => format!("PPT_{:?}", self.lambda),
            (Algorithm::Ppt, ContextMode::Proxy) => format!("PPT_{:?}_proxy", self.lambda),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub nll_term: f64,
    pub curiosity_term: f64,
    pub predictor_loss: Option<f64>,
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    /// Mean policy objective of every completed epoch.
    pub epoch_policy_loss: Vec<f64>,
    /// Mean predictor loss of every completed epoch.
    pub epoch_predictor_loss: Vec<f64>,
    pub converged_at_epoch: Option<usize>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,nll_term,curiosity_term,predictor_loss,wallclock_s";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let pred = r.predictor_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{:.3}", r.step, r.nll_term, r.curiosity_term, pred, r.wallclock_s).expect("string write");
        }
        s
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: ModelParams,
    pub predictor: Option<ModelParams>,
    pub log: TrainLog,
}

pub const POLICY_CHECKPOINT: &str = "policy.ckpt";
pub const PREDICTOR_CHECKPOINT: &str = "predictor.ckpt";
pub const DIVERGED_MARKER: &str = "DIVERGED";
pub const TRAIN_LOG: &str = "train_log.csv";

/// Shape of one transformer, shared by policy and predictor configs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            num_layers: 4,
            num_heads: 4,
        }
    }
}

impl ModelShape {
    pub fn policy_config(&self, num_arms: usize, horizon: usize, algorithm: Algorithm) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            num_arms,
            max_seq_len: horizon + 1,
            head_kind: HeadKind::ActionLogits,
            prediction_features: algorithm == Algorithm::Ppt,
        }
    }

    pub fn predictor_config(&self, num_arms: usize, horizon: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            num_arms,
            max_seq_len: horizon + 1,
            head_kind: HeadKind::RewardVector,
            prediction_features: false,
        }
    }
}

struct Guard {
    factor: f64,
    patience: usize,
    initial: Option<(f64, Option<f64>)>,
    strikes: usize,
}

impl Guard {
    fn check(&mut self, step: usize, nll: f64, pred: Option<f64>) -> Result<()> {
        if !nll.is_finite() || pred.is_some_and(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                step,
                reason: "non-finite loss".into(),
            });
        }
        let (n0, p0) = *self.initial.get_or_insert((nll, pred));
        let blown = nll > self.factor * n0 || matches!((pred, p0), (Some(p), Some(q)) if p > self.factor * q);
        self.strikes = if blown { self.strikes + 1 } else { 0 };
        if self.strikes >= self.patience {
            return Err(Error::Divergence {
                step,
                reason: format!(
                    "loss above {}x its initial value for {} consecutive steps",
                    self.factor, self.patience
                ),
            });
        }
        Ok(())
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_checkpoints(dir: &Path, policy: &ModelParams, predictor: Option<&ModelParams>) -> Result<()> {
    save_checkpoint(policy, dir.join(POLICY_CHECKPOINT))?;
    if let Some(p) = predictor {
        save_checkpoint(p, dir.join(PREDICTOR_CHECKPOINT))?;
    }
    Ok(())
}

/// Pretrains a policy (and, for PPT, a predictor) on `dataset`.
///
/// Each step draws a batch, updates the predictor on its regression loss,
/// then updates the policy on the curiosity-regularized objective using the
/// predictions made before the predictor update. With `frozen_predictor` the
/// predictor is used as given and never updated. When `out_dir` is given,
/// checkpoints are written there at the configured cadence and at the end;
/// on divergence the last good checkpoints and a marker file are left behind.
pub fn train(
    dataset: &PretrainDataset,
    shape_policy: &ModelShape,
    shape_predictor: &ModelShape,
    cfg: &TrainConfig,
    frozen_predictor: Option<ModelParams>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let k = dataset.num_arms();
    let n = dataset.horizon();
    let policy_cfg = shape_policy.policy_config(k, n, cfg.algorithm);
    let mut policy = init_params(&policy_cfg, derive_seed(cfg.seed, &[1]))?;
    let ppt = cfg.algorithm == Algorithm::Ppt;
    let frozen = cfg.predictor_mode == PredictorMode::PretrainedFrozen;
    let mut predictor = match (ppt, frozen, frozen_predictor) {
        (false, _, _) => None,
        (true, true, Some(p)) => {
            let pc = p.config();
            if pc.num_arms != k || pc.head_kind != HeadKind::RewardVector || pc.check_horizon(n).is_err() {
                return Err(Error::Config("frozen predictor does not match the dataset".into()));
            }
            Some(p)
        }
        (true, true, None) => return Err(Error::Config("pretrained_frozen mode needs a predictor checkpoint".into())),
        (true, false, _) => Some(init_params(&shape_predictor.predictor_config(k, n), derive_seed(cfg.seed, &[2]))?),
    };
    let mut policy_opt = OptimizerState::new(cfg.optimizer(), policy.tensors());
    let mut predictor_opt = predictor.as_ref().map(|p| OptimizerState::new(cfg.optimizer(), p.tensors()));
    let target = cfg.context_target();

    let mut guard = Guard {
        factor: cfg.divergence_factor,
        patience: cfg.divergence_patience,
        initial: None,
        strikes: 0,
    };
    let mut last_good = (policy.clone(), predictor.clone());
    let mut log = TrainLog::default();
    let start = Instant::now();

    let batch_size = cfg.batch_size.min(dataset.len());
    let mut epoch = 0usize;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = usize::MAX;
    let (mut epoch_pol, mut epoch_pred, mut epoch_steps) = (0.0, 0.0, 0usize);
    let mut calm_epochs = 0usize;

    for step in 0..cfg.steps {
        if cursor == usize::MAX || cursor + batch_size > order.len() {
            if epoch_steps > 0 {
                close_epoch(&mut log, epoch_pol / epoch_steps as f64, epoch_pred / epoch_steps as f64, ppt);
                epoch += 1;
                if cfg.stop_on_convergence && converged(&log, cfg, &mut calm_epochs) {
                    log.converged_at_epoch = Some(epoch);
                    break;
                }
            }
            order = (0..dataset.len()).collect();
            order.shuffle(&mut rng_for(cfg.seed, &[3, epoch as u64]));
            cursor = 0;
            (epoch_pol, epoch_pred, epoch_steps) = (0.0, 0.0, 0);
        }
        let batch: Vec<&Episode> = order[cursor..cursor + batch_size].iter().map(|&i| &dataset.episodes[i]).collect();
        cursor += batch_size;

        let outcome = (|| -> Result<(PolicyLoss, Option<f64>)> {
            if !ppt {
                let out = policy_objective(&policy, &batch, None, None, 0.0, cfg.shard_size)?;
                policy_opt.step(policy.tensors_mut(), &out.grads)?;
                return Ok((out, None));
            }
            let pred = predictor.as_mut().expect("ppt has a predictor");
            let (predictions, pred_loss) = if frozen {
                (predict_batch(pred, &batch)?, None)
            } else {
                let out = predictor_loss(pred, &batch, target, cfg.shard_size)?;
                let opt = predictor_opt.as_mut().expect("joint mode has an optimizer");
                opt.step(pred.tensors_mut(), &out.grads)?;
                (out.predictions, Some(out.value))
            };
            let curiosity = curiosity_vectors(&predictions, &batch, target)?;
            let out = policy_objective(&policy, &batch, Some(&predictions), Some(&curiosity), cfg.lambda, cfg.shard_size)?;
            policy_opt.step(policy.tensors_mut(), &out.grads)?;
            Ok((out, pred_loss))
        })();

        let checked = outcome.and_then(|(loss, pred_loss)| {
            guard.check(step, loss.nll, pred_loss)?;
            Ok((loss, pred_loss))
        });
        let (loss, pred_loss) = match checked {
            Ok(v) => v,
            Err(e) => {
                let err = match e {
                    Error::Numeric(reason) => Error::Divergence { step, reason },
                    other => other,
                };
                if let Some(dir) = out_dir {
                    write_checkpoints(dir, &last_good.0, last_good.1.as_ref())?;
                    write_file(&dir.join(TRAIN_LOG), &log.to_csv())?;
                    write_file(&dir.join(DIVERGED_MARKER), &format!("{err}\n"))?;
                }
                return Err(err);
            }
        };

        log.rows.push(TrainLogRow {
            step,
            nll_term: loss.nll,
            curiosity_term: loss.bonus,
            predictor_loss: pred_loss,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
        epoch_pol += loss.value;
        epoch_pred += pred_loss.unwrap_or(0.0);
        epoch_steps += 1;

        if guard.strikes == 0 {
            last_good = (policy.clone(), predictor.clone());
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = out_dir {
                write_checkpoints(dir, &last_good.0, last_good.1.as_ref())?;
            }
        }
    }
    if let Some(dir) = out_dir {
        write_checkpoints(dir, &policy, predictor.as_ref())?;
        write_file(&dir.join(TRAIN_LOG), &log.to_csv())?;
    }
    Ok(TrainOutcome { policy, predictor, log })
}

fn close_epoch(log: &mut TrainLog, policy_mean: f64, predictor_mean: f64, with_predictor: bool) {
    log.epoch_policy_loss.push(policy_mean);
    if with_predictor {
        log.epoch_predictor_loss.push(predictor_mean);
    }
}

fn converged(log: &TrainLog, cfg: &TrainConfig, calm: &mut usize) -> bool {
    let e = &log.epoch_policy_loss;
    if e.len() >= 2 && (e[e.len() - 1] - e[e.len() - 2]).abs() < cfg.convergence_tol {
        *calm += 1;
    } else {
        *calm = 0;
    }
    *calm >= cfg.convergence_epochs
}

#[cfg(test)]
mod tests;
