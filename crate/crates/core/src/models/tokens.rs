//! Row encoding of bandit histories.
//!
//! A history of `j` completed steps becomes `j + 1` rows. Row 0 is the query
//! row with a zero action slot and zero reward. Row `t >= 1` carries the
//! one-hot action and reward of step `t`. When the model consumes predictions,
//! row `t` additionally carries `c_{t+1}`, the prediction issued before the
//! next action, so the output at row `t` depends exactly on the first `t`
//! steps and predictions `c_1..=c_{t+1}`.
//!
//! Rows are append-only: extending the history never rewrites an earlier row,
//! which lets one causal pass over a full episode produce every per-step
//! output at once.

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    rows: usize,
    feature_dim: usize,
    data: Vec<f64>,
}

impl TokenSequence {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.feature_dim..(r + 1) * self.feature_dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.feature_dim..(r + 1) * self.feature_dim]
    }

    /// First `rows` rows.
    pub fn prefix(&self, rows: usize) -> TokenSequence {
        TokenSequence {
            rows,
            feature_dim: self.feature_dim,
            data: self.data[..rows * self.feature_dim].to_vec(),
        }
    }
}

/// Single row: `[one-hot(action) | reward | prediction]`.
pub fn encode_row(step: Option<(usize, f64)>, prediction: Option<&[f64]>, num_arms: usize) -> Vec<f64> {
    let mut row = vec![0.0; num_arms + 1 + prediction.map_or(0, <[f64]>::len)];
    if let Some((a, r)) = step {
        row[a] = 1.0;
        row[num_arms] = r;
    }
    if let Some(c) = prediction {
        row[num_arms + 1..].copy_from_slice(c);
    }
    row
}

fn encode(
    actions: &[usize],
    rewards: &[f64],
    predictions: Option<&[Vec<f64>]>,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    let k = cfg.num_arms;
    if actions.len() != rewards.len() {
        return Err(Error::Encoding(format!(
            "{} actions but {} rewards",
            actions.len(),
            rewards.len()
        )));
    }
    let rows = actions.len() + 1;
    if rows > cfg.max_seq_len {
        return Err(Error::Encoding(format!(
            "{rows} rows exceed max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= k) {
        return Err(Error::Encoding(format!("action {a} out of range for {k} arms")));
    }
    if let Some(p) = predictions {
        if p.len() != rows {
            return Err(Error::Encoding(format!(
                "{} predictions for a history of {} steps (need {rows})",
                p.len(),
                actions.len()
            )));
        }
        if let Some(bad) = p.iter().find(|c| c.len() != k) {
            return Err(Error::Encoding(format!("prediction of length {} for {k} arms", bad.len())));
        }
    }
    let feature_dim = cfg.feature_dim();
    let mut data = Vec::with_capacity(rows * feature_dim);
    for t in 0..rows {
        let step = (t > 0).then(|| (actions[t - 1], rewards[t - 1]));
        let pred = predictions.map(|p| p[t].as_slice());
        data.extend(encode_row(step, pred, k));
    }
    Ok(TokenSequence {
        rows,
        feature_dim,
        data,
    })
}

/// Policy input for a history plus predictions `c_1..=c_{j+1}`.
///
/// `predictions` must be present exactly when the policy was configured with
/// prediction features.
pub fn encode_policy_tokens(
    actions: &[usize],
    rewards: &[f64],
    predictions: Option<&[Vec<f64>]>,
    cfg: &ModelConfig,
) -> Result<TokenSequence> {
    match (cfg.prediction_features, predictions.is_some()) {
        (true, false) => return Err(Error::Encoding("policy expects prediction features".into())),
        (false, true) => return Err(Error::Encoding("policy takes no prediction features".into())),
        _ => {}
    }
    encode(actions, rewards, predictions, cfg)
}

/// Predictor input: the history alone.
pub fn encode_predictor_tokens(actions: &[usize], rewards: &[f64], cfg: &ModelConfig) -> Result<TokenSequence> {
    if cfg.prediction_features {
        return Err(Error::Encoding("predictor configuration must not take predictions".into()));
    }
    encode(actions, rewards, None, cfg)
}
