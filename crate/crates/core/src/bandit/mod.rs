//! Gaussian bandit tasks, the biased data-collection policy and offline
//! pretraining datasets.

mod io;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, LabRng};

pub use io::{dataset_bytes, load_dataset, save_dataset, DATASET_FORMAT_VERSION};

/// One Gaussian bandit task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditEnv {
    means: Vec<f64>,
    sigma: f64,
    horizon: usize,
}

impl BanditEnv {
    pub fn new(means: Vec<f64>, sigma: f64, horizon: usize) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Config("a bandit needs at least one arm".into()));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("arm means must be finite".into()));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("noise scale must be finite and >= 0, got {sigma}")));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(Self { means, sigma, horizon })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.means.clone(), sigma, self.horizon)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(self.means.clone(), self.sigma, horizon)
    }

    /// Index of the largest mean, lowest index on ties.
    pub fn optimal_arm(&self) -> usize {
        argmax(&self.means)
    }

    pub fn best_mean(&self) -> f64 {
        self.means[self.optimal_arm()]
    }

    pub fn draw_reward(&self, arm: usize, rng: &mut LabRng) -> Result<f64> {
        let mean = *self.means.get(arm).ok_or(Error::Index {
            index: arm,
            len: self.means.len(),
        })?;
        let z: f64 = StandardNormal.sample(rng);
        Ok(mean + self.sigma * z)
    }
}

/// First index of the maximum; lowest index wins exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Reward-noise variance law: fixed, or uniform on an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Fixed(f64),
    Interval([f64; 2]),
}

impl SigmaSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            SigmaSpec::Fixed(v) if v.is_finite() && v >= 0.0 => Ok(()),
            SigmaSpec::Interval([lo, hi]) if lo > 0.0 && lo <= hi && hi.is_finite() => Ok(()),
            other => Err(Error::Config(format!("invalid variance specification {other:?}"))),
        }
    }

    /// Draws a variance.
    pub fn sample_variance(&self, rng: &mut LabRng) -> f64 {
        match *self {
            SigmaSpec::Fixed(v) => v,
            SigmaSpec::Interval([lo, hi]) if lo == hi => lo,
            SigmaSpec::Interval([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }
}

/// Distribution over bandit tasks: i.i.d. uniform means on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvDistribution {
    num_arms: usize,
    sigma2: SigmaSpec,
    horizon: usize,
}

impl EnvDistribution {
    pub fn new(num_arms: usize, sigma2: SigmaSpec, horizon: usize) -> Result<Self> {
        if num_arms == 0 {
            return Err(Error::Config("num_arms must be positive".into()));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        sigma2.validate()?;
        Ok(Self {
            num_arms,
            sigma2,
            horizon,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn sigma2(&self) -> SigmaSpec {
        self.sigma2
    }

    pub fn sample_env(&self, rng: &mut LabRng) -> BanditEnv {
        let means = (0..self.num_arms).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let sigma = self.sigma2.sample_variance(rng).sqrt();
        BanditEnv {
            means,
            sigma,
            horizon: self.horizon,
        }
    }
}

/// Mixture of the expert arm and a fresh Dirichlet draw at every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollectionPolicyConfig {
    expert_weight: f64,
    dirichlet_alpha: f64,
}

impl CollectionPolicyConfig {
    pub fn new(expert_weight: f64, dirichlet_alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&expert_weight) {
            return Err(Error::Config(format!("expert weight must lie in [0, 1], got {expert_weight}")));
        }
        if !(dirichlet_alpha > 0.0) || !dirichlet_alpha.is_finite() {
            return Err(Error::Config(format!("dirichlet concentration must be positive, got {dirichlet_alpha}")));
        }
        Ok(Self {
            expert_weight,
            dirichlet_alpha,
        })
    }

    pub fn expert_weight(&self) -> f64 {
        self.expert_weight
    }

    pub fn dirichlet_alpha(&self) -> f64 {
        self.dirichlet_alpha
    }

    /// `w * e_expert + (1 - w) * p`.
    pub fn mix(&self, expert_arm: usize, exploratory: &[f64]) -> Result<Vec<f64>> {
        if expert_arm >= exploratory.len() {
            return Err(Error::Index {
                index: expert_arm,
                len: exploratory.len(),
            });
        }
        let w = self.expert_weight;
        Ok(exploratory
            .iter()
            .enumerate()
            .map(|(i, &p)| (1.0 - w) * p + if i == expert_arm { w } else { 0.0 })
            .collect())
    }

    /// Action distribution for one step, drawing a fresh symmetric Dirichlet
    /// vector of dimension `num_arms`.
    pub fn step(&self, expert_arm: usize, num_arms: usize, rng: &mut LabRng) -> Result<Vec<f64>> {
        let p = sample_dirichlet(self.dirichlet_alpha, num_arms, rng);
        self.mix(expert_arm, &p)
    }
}

fn sample_dirichlet(alpha: f64, k: usize, rng: &mut LabRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    loop {
        let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            draws.iter_mut().for_each(|d| *d /= total);
            return draws;
        }
    }
}

/// Samples an index from a probability vector, never landing on a
/// zero-probability entry.
pub fn sample_index(probs: &[f64], rng: &mut LabRng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// How the reward-free label `ĉ*` is estimated from a trajectory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyEstimator {
    /// Per-arm reward sum divided by the episode length.
    #[default]
    HorizonMean,
    /// Per-arm reward sum divided by that arm's pull count.
    PullCountMean,
}

/// Per-trajectory estimate of the arm means from offline rewards.
pub fn proxy_context(actions: &[usize], rewards: &[f64], num_arms: usize, estimator: ProxyEstimator) -> Vec<f64> {
    let mut sums = vec![0.0; num_arms];
    let mut counts = vec![0usize; num_arms];
    for (&a, &r) in actions.iter().zip(rewards) {
        sums[a] += r;
        counts[a] += 1;
    }
    match estimator {
        ProxyEstimator::HorizonMean => {
            let n = actions.len().max(1) as f64;
            sums.iter().map(|s| s / n).collect()
        }
        ProxyEstimator::PullCountMean => sums
            .iter()
            .zip(&counts)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect(),
    }
}

/// An offline trajectory with its supervision labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub action_probs: Vec<Vec<f64>>,
    pub optimal_arm: usize,
    pub true_means: Vec<f64>,
    pub proxy_means: Vec<f64>,
    pub env_sigma: f64,
}

impl Episode {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn num_arms(&self) -> usize {
        self.true_means.len()
    }

    /// Label vector for predictor training.
    pub fn context_target(&self, estimator: Option<ProxyEstimator>) -> Vec<f64> {
        match estimator {
            None => self.true_means.clone(),
            Some(ProxyEstimator::HorizonMean) => self.proxy_means.clone(),
            Some(e) => proxy_context(&self.actions, &self.rewards, self.num_arms(), e),
        }
    }
}

/// Rolls out the collection policy for `env.horizon()` steps.
pub fn generate_episode(env: &BanditEnv, cfg: &CollectionPolicyConfig, rng: &mut LabRng) -> Episode {
    let k = env.num_arms();
    let expert = env.optimal_arm();
    let n = env.horizon();
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut action_probs = Vec::with_capacity(n);
    for _ in 0..n {
        let probs = cfg.step(expert, k, rng).expect("expert arm is in range");
        let a = sample_index(&probs, rng);
        let r = env.draw_reward(a, rng).expect("sampled arm is in range");
        actions.push(a);
        rewards.push(r);
        action_probs.push(probs);
    }
    let proxy_means = proxy_context(&actions, &rewards, k, ProxyEstimator::HorizonMean);
    Episode {
        actions,
        rewards,
        action_probs,
        optimal_arm: expert,
        true_means: env.means().to_vec(),
        proxy_means,
        env_sigma: env.sigma(),
    }
}

/// Generation parameters. Together with the seed they determine every
/// episode bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub preset: String,
    pub num_arms: usize,
    pub expert_weight: f64,
    pub sigma2: SigmaSpec,
    pub horizon: usize,
    pub num_envs: usize,
    pub seed: u64,
    #[serde(default = "unit_alpha", skip_serializing_if = "is_unit_alpha")]
    pub dirichlet_alpha: f64,
}

fn unit_alpha() -> f64 {
    1.0
}

fn is_unit_alpha(a: &f64) -> bool {
    *a == 1.0
}

pub const DEFAULT_NUM_ARMS: usize = 3;
pub const DEFAULT_IDEAL_HORIZON: usize = 100;
pub const DEFAULT_TRICKY_HORIZON: usize = 200;
pub const DEFAULT_NUM_ENVS: usize = 20_000;

impl GenConfig {
    /// Exploratory collection: `w = 0.2`, variance uniform on `[0.1, 1.0]`.
    pub fn ideal(num_envs: usize, seed: u64) -> Self {
        Self {
            preset: "ideal".into(),
            num_arms: DEFAULT_NUM_ARMS,
            expert_weight: 0.2,
            sigma2: SigmaSpec::Interval([0.1, 1.0]),
            horizon: DEFAULT_IDEAL_HORIZON,
            num_envs,
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    /// Expert-biased, low-noise collection: `w = 0.8`, variance `0.1`.
    pub fn tricky(num_envs: usize, seed: u64) -> Self {
        Self {
            preset: "tricky".into(),
            num_arms: DEFAULT_NUM_ARMS,
            expert_weight: 0.8,
            sigma2: SigmaSpec::Fixed(0.1),
            horizon: DEFAULT_TRICKY_HORIZON,
            num_envs,
            seed,
            dirichlet_alpha: 1.0,
        }
    }

    pub fn from_preset(name: &str, num_envs: usize, seed: u64) -> Result<Self> {
        match name {
            "ideal" => Ok(Self::ideal(num_envs, seed)),
            "tricky" => Ok(Self::tricky(num_envs, seed)),
            other => Err(Error::Config(format!("unknown dataset preset '{other}' (expected ideal or tricky)"))),
        }
    }

    pub fn env_distribution(&self) -> Result<EnvDistribution> {
        EnvDistribution::new(self.num_arms, self.sigma2, self.horizon)
    }

    pub fn collection_policy(&self) -> Result<CollectionPolicyConfig> {
        CollectionPolicyConfig::new(self.expert_weight, self.dirichlet_alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_envs == 0 {
            return Err(Error::Config("dataset needs at least one environment".into()));
        }
        self.env_distribution()?;
        self.collection_policy()?;
        Ok(())
    }

    /// Canonical JSON text stored in dataset headers.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Serialized collection of labelled episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainDataset {
    pub episodes: Vec<Episode>,
    pub gen_config: GenConfig,
    pub format_version: u32,
}

impl PretrainDataset {
    pub fn num_arms(&self) -> usize {
        self.gen_config.num_arms
    }

    pub fn horizon(&self) -> usize {
        self.gen_config.horizon
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Episode `index` of a dataset drawn with `cfg`; independent of all others.
pub fn generate_indexed_episode(cfg: &GenConfig, dist: &EnvDistribution, policy: &CollectionPolicyConfig, index: usize) -> Episode {
    let mut rng = rng_for(cfg.seed, &[index as u64]);
    let env = dist.sample_env(&mut rng);
    generate_episode(&env, policy, &mut rng)
}

/// Samples `num_envs` tasks and one collection trajectory per task.
pub fn build_dataset(cfg: &GenConfig) -> Result<PretrainDataset> {
    cfg.validate()?;
    let dist = cfg.env_distribution()?;
    let policy = cfg.collection_policy()?;
    let episodes = (0..cfg.num_envs)
        .into_par_iter()
        .map(|i| generate_indexed_episode(cfg, &dist, &policy, i))
        .collect();
    Ok(PretrainDataset {
        episodes,
        gen_config: cfg.clone(),
        format_version: DATASET_FORMAT_VERSION,
    })
}
