//! Finite-difference gradient checks run by the `grad-check` command.

use rand::Rng;

use crate::autodiff::{check_against, grad_check, Graph, Tensor, Var};
use crate::bandit::{build_dataset, GenConfig};
use crate::error::Result;
use crate::models::{init_params, ModelParams};
use crate::seed::{rng_for, LabRng};
use crate::training::{dpt_loss, ppt_policy_loss, predictor_loss, Algorithm, ContextTarget, ModelShape};

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const LOSS_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(rng: &mut LabRng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Contracts an output with fixed random weights so every coordinate gets a
/// distinct upstream gradient.
fn contract(g: &mut Graph, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Checks every graph primitive on random float64 inputs.
pub fn primitive_checks(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = rng_for(seed, &[0]);
    let mut cases: Vec<(&'static str, Vec<Tensor>, Build)> = Vec::new();

    let w = uniform(&mut rng, 3, 5, -1.0, 1.0);
    cases.push((
        "matmul",
        vec![uniform(&mut rng, 3, 4, -1.0, 1.0), uniform(&mut rng, 4, 5, -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 2, 3, -1.0, 1.0);
    cases.push((
        "add/sub/mul/add_row/scale",
        vec![
            uniform(&mut rng, 2, 3, -1.0, 1.0),
            uniform(&mut rng, 2, 3, -1.0, 1.0),
            uniform(&mut rng, 1, 3, -1.0, 1.0),
        ],
        Box::new(move |g, v| {
            let a = g.add(v[0], v[1])?;
            let s = g.sub(a, v[1])?;
            let m = g.mul(s, v[1])?;
            let r = g.add_row(m, v[2])?;
            let y = g.scale(r, -1.3);
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 3, 4, -1.0, 1.0);
    cases.push((
        "gelu",
        vec![uniform(&mut rng, 3, 4, -3.0, 3.0)],
        Box::new(move |g, v| {
            let y = g.gelu(v[0]);
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 3, 4, -1.0, 1.0);
    cases.push((
        "log",
        vec![uniform(&mut rng, 3, 4, 0.5, 2.0)],
        Box::new(move |g, v| {
            let y = g.log(v[0]);
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 3, 4, -1.0, 1.0);
    cases.push((
        "softmax",
        vec![uniform(&mut rng, 3, 4, -2.0, 2.0)],
        Box::new(move |g, v| {
            let y = g.softmax(v[0]);
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 3, 6, -1.0, 1.0);
    cases.push((
        "layer_norm",
        vec![
            uniform(&mut rng, 3, 6, -1.0, 1.0),
            uniform(&mut rng, 1, 6, 0.5, 1.5),
            uniform(&mut rng, 1, 6, -1.0, 1.0),
        ],
        Box::new(move |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 8, 6, -1.0, 1.0);
    cases.push((
        "causal_attention",
        vec![uniform(&mut rng, 8, 18, -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.causal_attention(v[0], 2, 4, 2)?;
            contract(g, y, &w)
        }),
    ));
    let w = uniform(&mut rng, 5, 3, -1.0, 1.0);
    cases.push((
        "gather",
        vec![uniform(&mut rng, 4, 3, -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.gather(v[0], &[0, 2, 2, 3, 0])?;
            contract(g, y, &w)
        }),
    ));
    cases.push((
        "cross_entropy",
        vec![uniform(&mut rng, 4, 3, -2.0, 2.0)],
        Box::new(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2])),
    ));
    let target = uniform(&mut rng, 4, 3, -1.0, 1.0);
    cases.push((
        "squared_error",
        vec![uniform(&mut rng, 4, 3, -1.0, 1.0)],
        Box::new(move |g, v| g.squared_error(v[0], &target)),
    ));

    cases
        .into_iter()
        .map(|(name, params, build)| {
            Ok(GradCheck {
                name,
                max_rel_error: grad_check(build, &params, 1e-5)?,
                tolerance: PRIMITIVE_TOLERANCE,
            })
        })
        .collect()
}

fn loss_check(name: &'static str, params: &ModelParams, grads: &[Vec<f64>], loss: impl Fn(&ModelParams) -> Result<f64>) -> Result<GradCheck> {
    let eval = |t: &[Tensor]| loss(&ModelParams::from_tensors(params.config().clone(), t.to_vec())?);
    Ok(GradCheck {
        name,
        max_rel_error: check_against(eval, params.tensors(), grads, 1e-3)?,
        tolerance: LOSS_TOLERANCE,
    })
}

/// Full-objective checks on an embed-8, 2-layer, 3-arm model over horizon-4
/// episodes. `lambda` weights the curiosity bonus.
pub fn loss_checks(seed: u64, lambda: f64) -> Result<Vec<GradCheck>> {
    let ds = build_dataset(&GenConfig {
        horizon: 4,
        ..GenConfig::ideal(3, seed)
    })?;
    let batch: Vec<_> = ds.episodes.iter().collect();
    let shape = ModelShape {
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
    };
    let policy = init_params(&shape.policy_config(3, 4, Algorithm::Ppt), seed.wrapping_add(1))?;
    let predictor = init_params(&shape.predictor_config(3, 4), seed.wrapping_add(2))?;
    let dpt = init_params(&shape.policy_config(3, 4, Algorithm::Dpt), seed.wrapping_add(3))?;
    let target = ContextTarget::GroundTruth;
    let shard = 2;

    let out = ppt_policy_loss(&policy, &predictor, &batch, lambda, target, shard)?;
    let ppt = loss_check("policy objective with curiosity", &policy, &out.grads, |p| {
        Ok(ppt_policy_loss(p, &predictor, &batch, lambda, target, shard)?.value)
    })?;
    let out = predictor_loss(&predictor, &batch, target, shard)?;
    let pred = loss_check("predictor regression", &predictor, &out.grads, |p| {
        Ok(predictor_loss(p, &batch, target, shard)?.value)
    })?;
    let out = dpt_loss(&dpt, &batch, None, shard)?;
    let nll = loss_check("optimal-action likelihood", &dpt, &out.grads, |p| {
        Ok(dpt_loss(p, &batch, None, shard)?.value)
    })?;
    Ok(vec![ppt, pred, nll])
}
