use super::{ModelParams, LAYER_OFFSET, PER_LAYER};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Incremental causal inference: rows are fed one at a time and keys/values
/// of earlier rows are cached, so a `T`-step rollout costs one pass instead of
/// `T` growing passes. Outputs equal the batch forward at the same position.
pub struct Session<'a> {
    params: &'a ModelParams,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n..(i + 1) * n];
        for (yj, &wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
    y
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let c = x.len() as f64;
    let mean = x.iter().sum::<f64>() / c;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * rstd * g + b)
        .collect()
}

fn gelu(x: f64) -> f64 {
    const S: f64 = 0.797_884_560_802_865_4;
    0.5 * x * (1.0 + (S * (x + 0.044_715 * x * x * x)).tanh())
}

impl<'a> Session<'a> {
    pub fn new(params: &'a ModelParams) -> Self {
        let layers = params.config().num_layers;
        Self {
            params,
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
        }
    }

    /// Rows consumed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Consumes the next row and returns the raw head output at its position.
    pub fn push(&mut self, row: &[f64]) -> Result<Vec<f64>> {
        let cfg = self.params.config();
        if self.len >= cfg.max_seq_len {
            return Err(Error::Encoding(format!("sequence exceeds max_seq_len {}", cfg.max_seq_len)));
        }
        if row.len() != cfg.feature_dim() {
            return Err(Error::Dimension {
                op: "session",
                lhs: vec![cfg.feature_dim()],
                rhs: vec![row.len()],
            });
        }
        let t = self.params.tensors();
        let d = cfg.embed_dim;
        let heads = cfg.num_heads;
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let pos = self.len;

        let mut h = affine(row, t[0].data(), t[1].data());
        for (x, p) in h.iter_mut().zip(t[2].row(pos)) {
            *x += p;
        }

        for l in 0..cfg.num_layers {
            let p = &t[LAYER_OFFSET + l * PER_LAYER..][..PER_LAYER];
            let a = layer_norm(&h, p[0].data(), p[1].data());
            let qkv = affine(&a, p[2].data(), p[3].data());
            let (q, rest) = qkv.split_at(d);
            let (k, v) = rest.split_at(d);
            self.keys[l].extend_from_slice(k);
            self.values[l].extend_from_slice(v);
            let steps = pos + 1;
            let keys = &self.keys[l];
            let values = &self.values[l];
            let mut att = vec![0.0; d];
            let mut scores = vec![0.0; steps];
            for hh in 0..heads {
                let qh = &q[hh * hd..(hh + 1) * hd];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kh = &keys[j * d + hh * hd..j * d + (hh + 1) * hd];
                    *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                crate::autodiff::softmax_in_place(&mut scores);
                let out = &mut att[hh * hd..(hh + 1) * hd];
                for (j, &w) in scores.iter().enumerate() {
                    let vh = &values[j * d + hh * hd..j * d + (hh + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(vh) {
                        *o += w * vv;
                    }
                }
            }
            let o = affine(&att, p[4].data(), p[5].data());
            for (x, y) in h.iter_mut().zip(&o) {
                *x += y;
            }
            let m = layer_norm(&h, p[6].data(), p[7].data());
            let f: Vec<f64> = affine(&m, p[8].data(), p[9].data()).into_iter().map(gelu).collect();
            let f = affine(&f, p[10].data(), p[11].data());
            for (x, y) in h.iter_mut().zip(&f) {
                *x += y;
            }
        }
        let tail = LAYER_OFFSET + cfg.num_layers * PER_LAYER;
        let h = layer_norm(&h, t[tail].data(), t[tail + 1].data());
        let out = affine(&h, t[tail + 2].data(), t[tail + 3].data());
        self.len += 1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite model output".into()));
        }
        Ok(out)
    }
}
