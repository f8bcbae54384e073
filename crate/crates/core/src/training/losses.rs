//! Pretraining objectives.
//!
//! All losses are means over the batch of per-episode sums over the `n`
//! positions of an episode. Position `j` sees the first `j` steps.

use rayon::prelude::*;

use crate::autodiff::{Graph, Tensor, Var};
use crate::bandit::{Episode, ProxyEstimator};
use crate::error::{Error, Result};
use crate::models::{encode_policy_tokens, encode_predictor_tokens, forward_graph, head_outputs, ModelConfig, ModelParams, TokenSequence};

/// Which label the predictor regresses to (and curiosity is measured against).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContextTarget {
    GroundTruth,
    Proxy(ProxyEstimator),
}

impl ContextTarget {
    pub fn target(&self, ep: &Episode) -> Vec<f64> {
        match *self {
            ContextTarget::GroundTruth => ep.context_target(None),
            ContextTarget::Proxy(e) => ep.context_target(Some(e)),
        }
    }
}

/// Per-episode, per-position vectors (`[episode][position][arm]`).
pub type PerPosition = Vec<Vec<Vec<f64>>>;

/// Scalar value and parameter gradients in declaration order.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PredictorLoss {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    /// Predictions `c_1..=c_n` for every episode, computed before any update.
    pub predictions: PerPosition,
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    /// `nll - lambda * bonus`.
    pub value: f64,
    pub nll: f64,
    /// Curiosity bonus `<E_j, pi>` summed over positions, batch mean, unscaled.
    pub bonus: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Elementwise squared prediction error.
pub fn curiosity_vector(predicted: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if predicted.len() != target.len() {
        return Err(Error::Dimension {
            op: "curiosity_vector",
            lhs: vec![predicted.len()],
            rhs: vec![target.len()],
        });
    }
    Ok(predicted.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).collect())
}

fn history(ep: &Episode) -> (&[usize], &[f64]) {
    let n = ep.horizon();
    (&ep.actions[..n - 1], &ep.rewards[..n - 1])
}

pub(crate) fn predictor_tokens(ep: &Episode, cfg: &ModelConfig) -> Result<TokenSequence> {
    let (a, r) = history(ep);
    encode_predictor_tokens(a, r, cfg)
}

pub(crate) fn policy_tokens(ep: &Episode, predictions: Option<&[Vec<f64>]>, cfg: &ModelConfig) -> Result<TokenSequence> {
    let (a, r) = history(ep);
    encode_policy_tokens(a, r, predictions, cfg)
}

fn check_batch(batch: &[&Episode]) -> Result<usize> {
    let first = batch.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let n = first.horizon();
    if n == 0 || batch.iter().any(|e| e.horizon() != n) {
        return Err(Error::Config("batch episodes must share a positive horizon".into()));
    }
    Ok(n)
}

fn shard_ranges(len: usize, shard: usize) -> Vec<(usize, usize)> {
    let shard = shard.max(1);
    (0..len).step_by(shard).map(|s| (s, (s + shard).min(len))).collect()
}

/// Runs `f` on fixed shards of the batch (possibly in parallel) and reduces
/// values and gradients in shard order.
fn sharded<F>(params: &ModelParams, len: usize, shard: usize, f: F) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: Fn(&mut Graph, &[Var], usize, usize) -> Result<Vec<Var>> + Sync,
{
    let parts: Vec<Result<(Vec<f64>, Vec<Vec<f64>>)>> = shard_ranges(len, shard)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut g = Graph::new();
            let vars: Vec<Var> = params.tensors().iter().map(|t| g.param(t.clone())).collect();
            let outs = f(&mut g, &vars, lo, hi)?;
            g.backward(outs[0])?;
            let values = outs.iter().map(|&v| g.value(v).item()).collect();
            let grads = vars
                .iter()
                .zip(params.tensors())
                .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
                .collect();
            Ok((values, grads))
        })
        .collect();
    let mut values: Vec<f64> = Vec::new();
    let mut grads: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for part in parts {
        let (v, g) = part?;
        if values.is_empty() {
            values = vec![0.0; v.len()];
        }
        for (acc, x) in values.iter_mut().zip(&v) {
            *acc += x;
        }
        for (acc, x) in grads.iter_mut().zip(&g) {
            for (a, b) in acc.iter_mut().zip(x) {
                *a += b;
            }
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok((values, grads))
}

/// Predictor regression loss `mean_b sum_j ||q(.|D_j) - target||^2`.
pub fn predictor_loss(predictor: &ModelParams, batch: &[&Episode], target: ContextTarget, shard: usize) -> Result<PredictorLoss> {
    let n = check_batch(batch)?;
    let cfg = predictor.config();
    let k = cfg.num_arms;
    let inv = 1.0 / batch.len() as f64;
    let tokens = batch
        .iter()
        .map(|ep| predictor_tokens(ep, cfg))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = batch.iter().map(|ep| target.target(ep)).collect();
    let outputs: std::sync::Mutex<Vec<(usize, Vec<f64>)>> = Default::default();
    let (values, grads) = sharded(predictor, batch.len(), shard, |g, vars, lo, hi| {
        let seqs: Vec<&TokenSequence> = tokens[lo..hi].iter().collect();
        let out = forward_graph(g, vars, cfg, &seqs)?;
        let mut tiled = Vec::with_capacity((hi - lo) * n * k);
        for t in &targets[lo..hi] {
            for _ in 0..n {
                tiled.extend_from_slice(t);
            }
        }
        let tiled = Tensor::matrix((hi - lo) * n, k, tiled)?;
        let se = g.squared_error(out, &tiled)?;
        outputs
            .lock()
            .expect("no poisoned shard")
            .push((lo, g.value(out).data().to_vec()));
        Ok(vec![g.scale(se, inv)])
    })?;
    let mut shards = outputs.into_inner().expect("no poisoned shard");
    shards.sort_by_key(|(lo, _)| *lo);
    let predictions = shards
        .into_iter()
        .flat_map(|(_, flat)| {
            flat.chunks(n * k)
                .map(|seq| seq.chunks(k).map(<[f64]>::to_vec).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(PredictorLoss {
        value: values[0],
        grads,
        predictions,
    })
}

/// Curiosity vectors for every episode and position.
pub fn curiosity_vectors(predictions: &PerPosition, batch: &[&Episode], target: ContextTarget) -> Result<PerPosition> {
    predictions
        .iter()
        .zip(batch)
        .map(|(per_pos, ep)| {
            let t = target.target(ep);
            per_pos.iter().map(|c| curiosity_vector(c, &t)).collect()
        })
        .collect()
}

/// Policy objective `mean_b sum_j [-log pi(a*) - lambda <E_j, pi>]`.
///
/// `predictions` and `curiosity` enter as constants; only policy parameters
/// receive gradients.
pub fn policy_objective(
    policy: &ModelParams,
    batch: &[&Episode],
    predictions: Option<&PerPosition>,
    curiosity: Option<&PerPosition>,
    lambda: f64,
    shard: usize,
) -> Result<PolicyLoss> {
    let n = check_batch(batch)?;
    let cfg = policy.config();
    let k = cfg.num_arms;
    let inv = 1.0 / batch.len() as f64;
    let tokens = batch
        .iter()
        .enumerate()
        .map(|(i, ep)| policy_tokens(ep, predictions.map(|p| p[i].as_slice()), cfg))
        .collect::<Result<Vec<_>>>()?;
    let (values, grads) = sharded(policy, batch.len(), shard, |g, vars, lo, hi| {
        let seqs: Vec<&TokenSequence> = tokens[lo..hi].iter().collect();
        let logits = forward_graph(g, vars, cfg, &seqs)?;
        let targets: Vec<usize> = batch[lo..hi]
            .iter()
            .flat_map(|ep| std::iter::repeat_n(ep.optimal_arm, n))
            .collect();
        let nll = g.cross_entropy(logits, &targets)?;
        let Some(cur) = curiosity else {
            let total = g.scale(nll, inv);
            let nll_mean = g.scale(nll, inv);
            let zero = g.constant(Tensor::scalar(0.0));
            return Ok(vec![total, nll_mean, zero]);
        };
        let mut flat = Vec::with_capacity((hi - lo) * n * k);
        for per_pos in &cur[lo..hi] {
            for e in per_pos {
                flat.extend_from_slice(e);
            }
        }
        let e = g.constant(Tensor::matrix((hi - lo) * n, k, flat)?);
        let probs = g.softmax(logits);
        let weighted = g.mul(probs, e)?;
        let bonus = g.sum(weighted);
        let scaled = g.scale(bonus, lambda);
        let total = g.sub(nll, scaled)?;
        let total = g.scale(total, inv);
        let nll_mean = g.scale(nll, inv);
        let bonus_mean = g.scale(bonus, inv);
        Ok(vec![total, nll_mean, bonus_mean])
    })?;
    Ok(PolicyLoss {
        value: values[0],
        nll: values[1],
        bonus: values[2],
        grads,
    })
}

/// Negative log-likelihood of the optimal arm at every position. `predictions`
/// must be supplied exactly when the policy consumes them.
pub fn dpt_loss(policy: &ModelParams, batch: &[&Episode], predictions: Option<&PerPosition>, shard: usize) -> Result<LossOutput> {
    let out = policy_objective(policy, batch, predictions, None, 0.0, shard)?;
    Ok(LossOutput {
        value: out.value,
        grads: out.grads,
    })
}

/// Predictions of a fixed predictor on every position of every episode.
pub fn predict_batch(predictor: &ModelParams, batch: &[&Episode]) -> Result<PerPosition> {
    check_batch(batch)?;
    let tokens = batch
        .iter()
        .map(|ep| predictor_tokens(ep, predictor.config()))
        .collect::<Result<Vec<_>>>()?;
    let seqs: Vec<&TokenSequence> = tokens.iter().collect();
    head_outputs(predictor, &seqs)
}

/// Curiosity-regularized policy loss. The predictor is evaluated first and
/// its outputs are treated as constants.
pub fn ppt_policy_loss(
    policy: &ModelParams,
    predictor: &ModelParams,
    batch: &[&Episode],
    lambda: f64,
    target: ContextTarget,
    shard: usize,
) -> Result<PolicyLoss> {
    let predictions = predict_batch(predictor, batch)?;
    let curiosity = curiosity_vectors(&predictions, batch, target)?;
    policy_objective(policy, batch, Some(&predictions), Some(&curiosity), lambda, shard)
}
