//! Online deployment, baselines and evaluation metrics.

mod report;
mod sweep;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_in_place;
use crate::bandit::{argmax, sample_index, BanditEnv};
use crate::error::{Error, Result};
use crate::models::tokens::encode_row;
use crate::models::{HeadKind, ModelParams, Session};
use crate::seed::{rng_for, LabRng};

pub use report::{load_report, save_report, CellReport, EvalReport, Histogram, Manifest, AgentEntry, REPORT_FORMAT_VERSION};
pub use sweep::{run_sweep, Agent, SweepConfig, DEFAULT_EVAL_ENVS, DEFAULT_SIGMA2};

/// How a learned policy turns its distribution into an action.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    #[default]
    Sample,
    Greedy,
}

/// Independent random streams for one test environment: reward noise and
/// action sampling. Reward noise is drawn as standard normals and scaled by
/// the environment's sigma, so the same stream pairs runs across noise levels.
#[derive(Clone, Debug)]
pub struct RolloutRng {
    noise: LabRng,
    actions: LabRng,
}

impl RolloutRng {
    pub fn new(seed: u64, env_index: u64) -> Self {
        Self {
            noise: rng_for(seed, &[env_index, 1]),
            actions: rng_for(seed, &[env_index, 2]),
        }
    }

    fn reward(&mut self, env: &BanditEnv, arm: usize) -> f64 {
        let z: f64 = self.noise.sample(StandardNormal);
        env.means()[arm] + env.sigma() * z
    }
}

/// One deployment episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub means: Vec<f64>,
    /// Action distribution at every step (one-hot for deterministic choices).
    pub action_probs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Predictor estimate `c_t` used at step `t`, when a predictor is deployed.
    pub predictions: Option<Vec<Vec<f64>>>,
}

impl Rollout {
    fn empty(env: &BanditEnv, horizon: usize, with_predictions: bool) -> Self {
        Self {
            means: env.means().to_vec(),
            action_probs: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            predictions: with_predictions.then(|| Vec::with_capacity(horizon)),
        }
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    fn record(&mut self, probs: Vec<f64>, action: usize, reward: f64) {
        self.action_probs.push(probs);
        self.actions.push(action);
        self.rewards.push(reward);
    }
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

fn check_pair(policy: &ModelParams, predictor: Option<&ModelParams>, env: &BanditEnv, horizon: usize) -> Result<()> {
    let pc = policy.config();
    if pc.head_kind != HeadKind::ActionLogits {
        return Err(Error::Config("policy checkpoint does not hold a policy".into()));
    }
    if pc.num_arms != env.num_arms() {
        return Err(Error::Config(format!(
            "policy has {} arms, environment has {}",
            pc.num_arms,
            env.num_arms()
        )));
    }
    if horizon > pc.max_seq_len {
        return Err(Error::Config(format!(
            "horizon {horizon} exceeds policy context {}",
            pc.max_seq_len
        )));
    }
    match (pc.prediction_features, predictor) {
        (false, None) => Ok(()),
        (false, Some(_)) => Err(Error::Config("policy does not consume predictions".into())),
        (true, None) => Err(Error::Config("policy consumes predictions but no predictor was given".into())),
        (true, Some(q)) => {
            let qc = q.config();
            if qc.head_kind != HeadKind::RewardVector || qc.num_arms != pc.num_arms {
                return Err(Error::Config("predictor checkpoint is incompatible with the policy".into()));
            }
            if horizon > qc.max_seq_len {
                return Err(Error::Config(format!(
                    "horizon {horizon} exceeds predictor context {}",
                    qc.max_seq_len
                )));
            }
            Ok(())
        }
    }
}

/// Runs a pretrained policy (and its predictor, if it uses one) online.
///
/// At every step the predictor estimates the mean rewards from the history so
/// far, the policy sees the history with those estimates and picks an action,
/// and the environment's reward extends the history.
pub fn deploy(
    policy: &ModelParams,
    predictor: Option<&ModelParams>,
    env: &BanditEnv,
    horizon: usize,
    rng: &mut RolloutRng,
    mode: ActionMode,
) -> Result<Rollout> {
    check_pair(policy, predictor, env, horizon)?;
    let k = env.num_arms();
    let mut out = Rollout::empty(env, horizon, predictor.is_some());
    if horizon == 0 {
        return Ok(out);
    }
    let mut pol = Session::new(policy);
    let mut pred = predictor.map(Session::new);
    let mut step: Option<(usize, f64)> = None;
    for _ in 0..horizon {
        let c = match pred.as_mut() {
            Some(s) => Some(s.push(&encode_row(step, None, k))?),
            None => None,
        };
        let mut probs = pol.push(&encode_row(step, c.as_deref(), k))?;
        softmax_in_place(&mut probs);
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("policy produced a non-finite distribution".into()));
        }
        let (action, recorded) = match mode {
            ActionMode::Sample => (sample_index(&probs, &mut rng.actions), probs),
            ActionMode::Greedy => {
                let a = argmax(&probs);
                (a, one_hot(k, a))
            }
        };
        let reward = rng.reward(env, action);
        if let (Some(list), Some(c)) = (out.predictions.as_mut(), c) {
            list.push(c);
        }
        out.record(recorded, action, reward);
        step = Some((action, reward));
    }
    Ok(out)
}

/// UCB with bonus `beta * sqrt(1 / n_a)`. Each arm is pulled once first, in
/// index order; ties go to the lowest index.
pub fn ucb_rollout(env: &BanditEnv, beta: f64, horizon: usize, rng: &mut RolloutRng) -> Result<Rollout> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!("UCB beta must be positive, got {beta}")));
    }
    let k = env.num_arms();
    let mut out = Rollout::empty(env, horizon, false);
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    for t in 0..horizon {
        let action = if t < k {
            t
        } else {
            let scores: Vec<f64> = (0..k)
                .map(|a| sums[a] / counts[a] as f64 + beta * (1.0 / counts[a] as f64).sqrt())
                .collect();
            argmax(&scores)
        };
        let reward = rng.reward(env, action);
        counts[action] += 1;
        sums[action] += reward;
        out.record(one_hot(k, action), action, reward);
    }
    Ok(out)
}

/// Uniformly random actions.
pub fn random_rollout(env: &BanditEnv, horizon: usize, rng: &mut RolloutRng) -> Rollout {
    let k = env.num_arms();
    let mut out = Rollout::empty(env, horizon, false);
    for _ in 0..horizon {
        let action = rng.actions.gen_range(0..k);
        let reward = rng.reward(env, action);
        out.record(vec![1.0 / k as f64; k], action, reward);
    }
    out
}

fn common_horizon(rollouts: &[Rollout]) -> Result<usize> {
    let first = rollouts
        .first()
        .ok_or_else(|| Error::Config("no rollouts to evaluate".into()))?;
    let n = first.horizon();
    if rollouts.iter().any(|r| r.horizon() != n) {
        return Err(Error::Config("rollouts have different horizons".into()));
    }
    Ok(n)
}

/// `mu* - <p_t, mu>` at every step of one rollout.
pub fn suboptimality(rollout: &Rollout) -> Vec<f64> {
    let best = rollout.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    rollout
        .action_probs
        .iter()
        .map(|p| {
            let expected: f64 = p.iter().zip(&rollout.means).map(|(a, b)| a * b).sum();
            (best - expected).max(0.0)
        })
        .collect()
}

fn mean_curve(rollouts: &[Rollout], n: usize, per_rollout: impl Fn(&Rollout) -> Vec<f64>) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for r in rollouts {
        for (a, v) in acc.iter_mut().zip(per_rollout(r)) {
            *a += v;
        }
    }
    let m = rollouts.len() as f64;
    acc.into_iter().map(|v| v / m).collect()
}

/// Suboptimality at each step, averaged over rollouts.
pub fn avg_suboptimality(rollouts: &[Rollout]) -> Result<Vec<f64>> {
    let n = common_horizon(rollouts)?;
    Ok(mean_curve(rollouts, n, suboptimality))
}

/// Running sum of `curve`.
pub fn prefix_sum(curve: &[f64]) -> Vec<f64> {
    curve
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Cumulative regret averaged over rollouts.
pub fn avg_regret(rollouts: &[Rollout]) -> Result<Vec<f64>> {
    Ok(prefix_sum(&avg_suboptimality(rollouts)?))
}

/// Total regret of every rollout plus a fixed 50-bin histogram over
/// `[0, max]`.
pub fn regret_distribution(rollouts: &[Rollout]) -> (Vec<f64>, Histogram) {
    let totals: Vec<f64> = rollouts.iter().map(|r| suboptimality(r).iter().sum()).collect();
    let hist = Histogram::of(&totals);
    (totals, hist)
}

/// Squared distance between the predictor's estimate and the true means at
/// each step, averaged over rollouts.
pub fn online_prediction_loss(rollouts: &[Rollout]) -> Result<Vec<f64>> {
    let n = common_horizon(rollouts)?;
    if rollouts.iter().any(|r| r.predictions.is_none()) {
        return Err(Error::Config("rollouts carry no predictor estimates".into()));
    }
    Ok(mean_curve(rollouts, n, |r| {
        r.predictions
            .as_ref()
            .expect("checked above")
            .iter()
            .map(|c| c.iter().zip(&r.means).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect()
    }))
}

/// `metric(sigma2, t) - metric(baseline, t)` for a curve family keyed by
/// test variance. `t` counts steps from 1.
pub fn degradation_delta(curves: &[(f64, Vec<f64>)], sigma2: f64, baseline: f64, t: usize) -> Result<f64> {
    let at = |s: f64| -> Result<f64> {
        let (_, c) = curves
            .iter()
            .find(|(k, _)| (k - s).abs() < 1e-12)
            .ok_or_else(|| Error::Config(format!("no curve for sigma2 = {s}")))?;
        if t == 0 || t > c.len() {
            return Err(Error::Index { index: t, len: c.len() });
        }
        Ok(c[t - 1])
    };
    Ok(at(sigma2)? - at(baseline)?)
}
