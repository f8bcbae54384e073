use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.5..2.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Reduces an arbitrary output to a scalar through a fixed random weighting so
/// every output coordinate contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, shape[0], shape[1]);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

const PRIMITIVE_TOL: f64 = 1e-6;

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![1, 3]));
    let y = g.softmax(x);
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn identity_matmul_returns_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, 3, 4);
    let mut eye = Tensor::zeros(vec![3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let mut g = Graph::new();
    let (i, xv) = (g.constant(eye), g.constant(x.clone()));
    let y = g.matmul(i, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn derivative_of_sum_of_squares() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[6.0]);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn grad_check_quadratic_is_exact() {
    let err = grad_check(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum(sq))
        },
        &[Tensor::scalar(3.0)],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn grad_check_constant_function_is_zero() {
    let err = grad_check(
        |g, _| Ok(g.constant(Tensor::scalar(4.2))),
        &[Tensor::scalar(1.0)],
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn grad_check_rejects_non_finite() {
    let res = grad_check(|g, v| Ok(g.log(v[0])), &[Tensor::scalar(-1.0)], 1e-5);
    assert!(matches!(res, Err(Error::Numeric(_))));
}

#[test]
fn primitive_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = [random(&mut rng, 3, 4), random(&mut rng, 4, 5)];
    let err = grad_check(
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, 10)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn primitive_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = [random(&mut rng, 2, 3), random(&mut rng, 2, 3), random(&mut rng, 1, 3)];
    let err = grad_check(
        |g, v| {
            let a = g.add(v[0], v[1])?;
            let s = g.sub(a, v[1])?;
            let m = g.mul(s, v[1])?;
            let r = g.add_row(m, v[2])?;
            let sc = g.scale(r, 1.7);
            let ge = g.gelu(sc);
            weighted_sum(g, ge, 11)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn primitive_softmax_and_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = [random(&mut rng, 3, 4)];
    let err = grad_check(
        |g, v| {
            let p = g.softmax(v[0]);
            let l = g.log(p);
            weighted_sum(g, l, 12)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");

    let params = [positive(&mut rng, 2, 2)];
    let err = grad_check(
        |g, v| {
            let l = g.log(v[0]);
            weighted_sum(g, l, 13)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn primitive_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = [random(&mut rng, 3, 6), random(&mut rng, 1, 6), random(&mut rng, 1, 6)];
    let err = grad_check(
        |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(g, y, 14)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn primitive_causal_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // batch 2, seq 4, dim 6 split over 2 heads
    let params = [random(&mut rng, 8, 18)];
    let err = grad_check(
        |g, v| {
            let y = g.causal_attention(v[0], 2, 4, 2)?;
            weighted_sum(g, y, 15)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn primitive_gather() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = [random(&mut rng, 4, 3)];
    let err = grad_check(
        |g, v| {
            let y = g.gather(v[0], &[0, 2, 2, 3, 0])?;
            weighted_sum(g, y, 16)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn primitive_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = [random(&mut rng, 4, 3)];
    let err = grad_check(|g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]), &params, 1e-5).unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");

    let target = random(&mut rng, 4, 3);
    let err = grad_check(|g, v| g.squared_error(v[0], &target), &params, 1e-5).unwrap();
    assert!(err < PRIMITIVE_TOL, "{err}");
}

#[test]
fn attention_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, 5, 12);
    let mut y = x.clone();
    for v in y.data_mut()[3 * 12..].iter_mut() {
        *v += 1.0;
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(x), g.constant(y));
    let oa = g.causal_attention(a, 1, 5, 2).unwrap();
    let ob = g.causal_attention(b, 1, 5, 2).unwrap();
    assert_eq!(&g.value(oa).data()[..3 * 4], &g.value(ob).data()[..3 * 4]);
    assert_ne!(&g.value(oa).data()[3 * 4..], &g.value(ob).data()[3 * 4..]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, 3, 4);
    let w = random(&mut rng, 4, 2);
    let build = |g: &mut Graph, which: u8| -> (Var, Var) {
        let xv = g.param(x.clone());
        let wv = g.param(w.clone());
        let h = g.matmul(xv, wv).unwrap();
        let h = g.gelu(h);
        let l1 = g.cross_entropy(h, &[0, 1, 1]).unwrap();
        let p = g.softmax(h);
        let l2 = g.sum(p);
        let l2 = g.scale(l2, 0.3);
        let out = match which {
            0 => g.add(l1, l2).unwrap(),
            1 => l1,
            _ => l2,
        };
        (out, wv)
    };
    let grads: Vec<Vec<f64>> = (0..3)
        .map(|which| {
            let mut g = Graph::new();
            let (out, wv) = build(&mut g, which);
            g.backward(out).unwrap();
            g.grad(wv).unwrap().to_vec()
        })
        .collect();
    for i in 0..grads[0].len() {
        assert!((grads[0][i] - (grads[1][i] + grads[2][i])).abs() < 1e-12);
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::scalar(2.0));
    let p = g.param(Tensor::scalar(3.0));
    let m = g.mul(c, p).unwrap();
    g.backward(m).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(p).unwrap(), &[2.0]);
}

#[test]
fn adamw_zero_grads_without_decay_is_identity() {
    let mut params = vec![Tensor::matrix(1, 3, vec![0.1, -2.0, 5.0]).unwrap()];
    let before = params.clone();
    let cfg = AdamWConfig {
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut state = OptimizerState::new(cfg, &params);
    state.step(&mut params, &[vec![0.0; 3]]).unwrap();
    assert_eq!(params, before);
    assert_eq!(state.step_count(), 1);
}

#[test]
fn adamw_decay_is_decoupled() {
    let mut params = vec![Tensor::matrix(1, 2, vec![2.0, -4.0]).unwrap()];
    let cfg = AdamWConfig {
        learning_rate: 1.0,
        weight_decay: 0.1,
        ..AdamWConfig::default()
    };
    let mut state = OptimizerState::new(cfg, &params);
    state.step(&mut params, &[vec![0.0; 2]]).unwrap();
    assert!((params[0].data()[0] - 1.8).abs() < 1e-15);
    assert!((params[0].data()[1] + 3.6).abs() < 1e-15);
}

#[test]
fn adamw_matches_hand_recursion() {
    // p0 = 1, grads 0.5 then -0.2, lr 0.1, wd 0.01; values from a direct
    // evaluation of the AdamW recursion.
    let mut params = vec![Tensor::scalar(1.0)];
    let cfg = AdamWConfig {
        learning_rate: 0.1,
        weight_decay: 0.01,
        ..AdamWConfig::default()
    };
    let mut state = OptimizerState::new(cfg, &params);
    state.step(&mut params, &[vec![0.5]]).unwrap();
    assert!((params[0].item() - 0.899000002).abs() < 1e-12);
    state.step(&mut params, &[vec![-0.2]]).unwrap();
    assert!((params[0].item() - 0.8635404181145108).abs() < 1e-12);
}

#[test]
fn adamw_rejects_nan_and_keeps_state() {
    let mut params = vec![Tensor::scalar(1.0)];
    let mut state = OptimizerState::new(AdamWConfig::default(), &params);
    state.step(&mut params, &[vec![0.3]]).unwrap();
    let (p_before, s_before) = (params.clone(), state.clone());
    let err = state.step(&mut params, &[vec![f64::NAN]]);
    assert!(matches!(err, Err(Error::Numeric(_))));
    assert_eq!(params, p_before);
    assert_eq!(state, s_before);
}

#[test]
fn adamw_is_deterministic() {
    let run = || {
        let mut params = vec![Tensor::matrix(1, 2, vec![0.3, 0.7]).unwrap()];
        let mut state = OptimizerState::new(AdamWConfig::default(), &params);
        for k in 0..5 {
            let g = vec![0.1 * k as f64, -0.05];
            state.step(&mut params, &[g]).unwrap();
        }
        params
    };
    assert_eq!(run(), run());
}
