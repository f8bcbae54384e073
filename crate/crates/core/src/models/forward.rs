use super::tokens::TokenSequence;
use super::{HeadKind, ModelConfig, ModelParams, LAYER_OFFSET, PER_LAYER};
use crate::autodiff::{softmax_in_place, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Records the forward pass for a batch of equal-length sequences.
///
/// `vars` are the parameter variables in declaration order. Returns the
/// `[batch * rows, num_arms]` head output: logits for a policy, reward
/// estimates for a predictor.
pub fn forward_graph(g: &mut Graph, vars: &[Var], cfg: &ModelConfig, batch: &[&TokenSequence]) -> Result<Var> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Encoding("empty batch".into()))?;
    let rows = first.rows();
    let fdim = cfg.feature_dim();
    if rows > cfg.max_seq_len {
        return Err(Error::Encoding(format!(
            "{rows} rows exceed max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    let mut input = Vec::with_capacity(batch.len() * rows * fdim);
    for seq in batch {
        if seq.rows() != rows || seq.feature_dim() != fdim {
            return Err(Error::Dimension {
                op: "forward",
                lhs: vec![rows, fdim],
                rhs: vec![seq.rows(), seq.feature_dim()],
            });
        }
        input.extend_from_slice(seq.data());
    }
    let b = batch.len();
    let x = g.constant(Tensor::matrix(b * rows, fdim, input)?);
    let positions: Vec<usize> = (0..b).flat_map(|_| 0..rows).collect();

    let mut h = g.matmul(x, vars[0])?;
    h = g.add_row(h, vars[1])?;
    let pos = g.gather(vars[2], &positions)?;
    h = g.add(h, pos)?;

    for l in 0..cfg.num_layers {
        let p = &vars[LAYER_OFFSET + l * PER_LAYER..][..PER_LAYER];
        let a = g.layer_norm(h, p[0], p[1])?;
        let qkv = g.matmul(a, p[2])?;
        let qkv = g.add_row(qkv, p[3])?;
        let att = g.causal_attention(qkv, b, rows, cfg.num_heads)?;
        let o = g.matmul(att, p[4])?;
        let o = g.add_row(o, p[5])?;
        h = g.add(h, o)?;
        let m = g.layer_norm(h, p[6], p[7])?;
        let f = g.matmul(m, p[8])?;
        let f = g.add_row(f, p[9])?;
        let f = g.gelu(f);
        let f = g.matmul(f, p[10])?;
        let f = g.add_row(f, p[11])?;
        h = g.add(h, f)?;
    }
    let tail = LAYER_OFFSET + cfg.num_layers * PER_LAYER;
    let h = g.layer_norm(h, vars[tail], vars[tail + 1])?;
    let out = g.matmul(h, vars[tail + 2])?;
    g.add_row(out, vars[tail + 3])
}

/// Raw head outputs for each sequence, one vector per row.
pub fn head_outputs(params: &ModelParams, batch: &[&TokenSequence]) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.tensors().iter().map(|t| g.constant(t.clone())).collect();
    let out = forward_graph(&mut g, &vars, params.config(), batch)?;
    let value = g.value(out);
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite model output".into()));
    }
    let rows = batch[0].rows();
    let k = value.cols();
    Ok(value
        .data()
        .chunks(rows * k)
        .map(|seq| seq.chunks(k).map(<[f64]>::to_vec).collect())
        .collect())
}

fn expect_head(params: &ModelParams, kind: HeadKind) -> Result<()> {
    if params.config().head_kind != kind {
        return Err(Error::Config(format!(
            "model has a {:?} head, expected {kind:?}",
            params.config().head_kind
        )));
    }
    Ok(())
}

/// Per-row action distributions.
pub fn policy_forward(params: &ModelParams, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>> {
    expect_head(params, HeadKind::ActionLogits)?;
    let mut rows = head_outputs(params, &[tokens])?.remove(0);
    for r in rows.iter_mut() {
        softmax_in_place(r);
    }
    Ok(rows)
}

/// Per-row reward-vector estimates.
pub fn predictor_forward(params: &ModelParams, tokens: &TokenSequence) -> Result<Vec<Vec<f64>>> {
    expect_head(params, HeadKind::RewardVector)?;
    Ok(head_outputs(params, &[tokens])?.remove(0))
}
