use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{AgentEntry, CellReport, EvalReport, Histogram, Manifest, REPORT_FORMAT_VERSION};
use super::{
    avg_regret, avg_suboptimality, deploy, online_prediction_loss, random_rollout, regret_distribution, ucb_rollout,
    ActionMode, Rollout, RolloutRng,
};
use crate::bandit::{BanditEnv, EnvDistribution, SigmaSpec};
use crate::error::{Error, Result};
use crate::models::{checkpoint_bytes, ModelParams};
use crate::seed::rng_for;

pub const DEFAULT_SIGMA2: [f64; 3] = [0.3, 0.5, 0.9];
pub const DEFAULT_EVAL_ENVS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma2: Vec<f64>,
    pub num_envs: usize,
    pub num_arms: usize,
    /// Test horizon; taken from the learned policies when absent.
    pub horizon: Option<usize>,
    pub mode: ActionMode,
    pub ucb_beta: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sigma2: DEFAULT_SIGMA2.to_vec(),
            num_envs: DEFAULT_EVAL_ENVS,
            num_arms: crate::bandit::DEFAULT_NUM_ARMS,
            horizon: None,
            mode: ActionMode::Sample,
            ucb_beta: 1.0,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma2.is_empty() {
            return Err(Error::Config("sweep needs at least one test variance".into()));
        }
        if let Some(s) = self.sigma2.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Config(format!("invalid test variance {s}")));
        }
        for (i, a) in self.sigma2.iter().enumerate() {
            if self.sigma2[..i].contains(a) {
                return Err(Error::Config(format!("test variance {a} listed twice")));
            }
        }
        if self.num_envs == 0 || self.num_arms == 0 {
            return Err(Error::Config("num_envs and num_arms must be positive".into()));
        }
        if !(self.ucb_beta > 0.0) {
            return Err(Error::Config(format!("UCB beta must be positive, got {}", self.ucb_beta)));
        }
        Ok(())
    }

    /// Test environment `index` at test variance `sigma2`. Means depend only on
    /// the seed and index, so every variance level sees the same tasks.
    pub fn env(&self, index: usize, sigma2: f64, horizon: usize) -> Result<BanditEnv> {
        let dist = EnvDistribution::new(self.num_arms, SigmaSpec::Fixed(sigma2), horizon.max(1))?;
        let env = dist.sample_env(&mut rng_for(self.seed, &[index as u64, 0]));
        env.with_horizon(horizon)
    }
}

/// An algorithm under evaluation.
#[derive(Clone, Debug)]
pub enum Agent {
    Learned {
        name: String,
        policy: ModelParams,
        predictor: Option<ModelParams>,
    },
    Ucb {
        beta: f64,
    },
    Random,
}

impl Agent {
    pub fn name(&self) -> &str {
        match self {
            Agent::Learned { name, .. } => name,
            Agent::Ucb { .. } => "UCB",
            Agent::Random => "Random",
        }
    }

    fn rollout(&self, env: &BanditEnv, horizon: usize, rng: &mut RolloutRng, mode: ActionMode) -> Result<Rollout> {
        match self {
            Agent::Learned { policy, predictor, .. } => deploy(policy, predictor.as_ref(), env, horizon, rng, mode),
            Agent::Ucb { beta } => ucb_rollout(env, *beta, horizon, rng),
            Agent::Random => Ok(random_rollout(env, horizon, rng)),
        }
    }

    fn entry(&self) -> AgentEntry {
        let hash = |p: &ModelParams| hex::encode(Sha256::digest(checkpoint_bytes(p)));
        match self {
            Agent::Learned {
                name,
                policy,
                predictor,
            } => AgentEntry {
                name: name.clone(),
                kind: "learned".into(),
                policy_sha256: Some(hash(policy)),
                predictor_sha256: predictor.as_ref().map(hash),
                policy_config: Some(policy.config().clone()),
                predictor_config: predictor.as_ref().map(|p| p.config().clone()),
                ucb_beta: None,
            },
            Agent::Ucb { beta } => AgentEntry {
                name: self.name().into(),
                kind: "ucb".into(),
                ucb_beta: Some(*beta),
                ..AgentEntry::default()
            },
            Agent::Random => AgentEntry {
                name: self.name().into(),
                kind: "random".into(),
                ..AgentEntry::default()
            },
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

fn resolve_horizon(agents: &[Agent], cfg: &SweepConfig) -> Result<usize> {
    if let Some(h) = cfg.horizon {
        return Ok(h);
    }
    agents
        .iter()
        .find_map(|a| match a {
            Agent::Learned { policy, .. } => Some(policy.config().max_seq_len - 1),
            _ => None,
        })
        .ok_or_else(|| Error::Config("sweep horizon is required when no learned policy is evaluated".into()))
}

/// Evaluates every agent on the same seed-derived environments at every test
/// variance. Environment `i` uses the same reward-noise and action streams for
/// every agent and variance.
pub fn run_sweep(agents: &[Agent], cfg: &SweepConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if agents.is_empty() {
        return Err(Error::Config("nothing to evaluate".into()));
    }
    for (i, a) in agents.iter().enumerate() {
        if !valid_name(a.name()) {
            return Err(Error::Config(format!("algorithm name {:?} is not a valid directory name", a.name())));
        }
        if agents[..i].iter().any(|b| b.name() == a.name()) {
            return Err(Error::Config(format!("algorithm {} listed twice", a.name())));
        }
    }
    let horizon = resolve_horizon(agents, cfg)?;
    let mut cells = Vec::with_capacity(agents.len() * cfg.sigma2.len());
    for agent in agents {
        for &s in &cfg.sigma2 {
            let rollouts = (0..cfg.num_envs)
                .into_par_iter()
                .map(|i| {
                    let env = cfg.env(i, s, horizon)?;
                    agent.rollout(&env, horizon, &mut RolloutRng::new(cfg.seed, i as u64), cfg.mode)
                })
                .collect::<Result<Vec<_>>>()?;
            let (totals, histogram) = regret_distribution(&rollouts);
            let prediction_loss = match rollouts.first().and_then(|r| r.predictions.as_ref()) {
                Some(_) => Some(online_prediction_loss(&rollouts)?),
                None => None,
            };
            cells.push(CellReport {
                algorithm: agent.name().to_string(),
                sigma2: s,
                avg_suboptimality: avg_suboptimality(&rollouts)?,
                avg_regret: avg_regret(&rollouts)?,
                totals,
                histogram,
                prediction_loss,
            });
        }
    }
    let manifest = Manifest {
        format_version: REPORT_FORMAT_VERSION,
        sweep: SweepConfig {
            horizon: Some(horizon),
            ..cfg.clone()
        },
        agents: agents.iter().map(Agent::entry).collect(),
        inputs: Default::default(),
    };
    Ok(EvalReport { manifest, cells })
}

impl Histogram {
    /// 50 uniform bins over `[0, max(values)]`; everything lands in bin 0
    /// when the maximum is zero.
    pub fn of(values: &[f64]) -> Self {
        const BINS: usize = 50;
        let hi = values.iter().cloned().fold(0.0, f64::max);
        let mut counts = vec![0usize; BINS];
        for &v in values {
            let b = if hi > 0.0 {
                ((v / hi * BINS as f64) as usize).min(BINS - 1)
            } else {
                0
            };
            counts[b] += 1;
        }
        Self { lo: 0.0, hi, counts }
    }
}
