use super::*;
use crate::error::Error;

fn cfg(head: HeadKind, predictions: bool) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        num_arms: 3,
        max_seq_len: 6,
        head_kind: head,
        prediction_features: predictions,
    }
}

fn history() -> (Vec<usize>, Vec<f64>) {
    (vec![1, 0, 2, 2], vec![0.7, -0.1, 0.4, 1.3])
}

fn preds(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![0.1 * i as f64, 0.5, -0.2]).collect()
}

#[test]
fn empty_history_is_one_query_row() {
    let c = cfg(HeadKind::ActionLogits, true);
    let t = encode_policy_tokens(&[], &[], Some(&[vec![0.5, 0.5, 0.5]]), &c).unwrap();
    assert_eq!(t.rows(), 1);
    assert_eq!(t.row(0), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5]);
}

#[test]
fn one_step_history_layout() {
    let c = cfg(HeadKind::ActionLogits, true);
    let c1 = vec![0.1, 0.2, 0.3];
    let c2 = vec![0.4, 0.5, 0.6];
    let t = encode_policy_tokens(&[1], &[0.7], Some(&[c1.clone(), c2.clone()]), &c).unwrap();
    assert_eq!(t.rows(), 2);
    assert_eq!(t.row(0), &[0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.3]);
    assert_eq!(t.row(1), &[0.0, 1.0, 0.0, 0.7, 0.4, 0.5, 0.6]);
}

#[test]
fn encoding_errors() {
    let c = cfg(HeadKind::ActionLogits, true);
    let too_long = vec![0usize; 6];
    let rewards = vec![0.0; 6];
    assert!(matches!(
        encode_policy_tokens(&too_long, &rewards, Some(&preds(7)), &c),
        Err(Error::Encoding(_))
    ));
    assert!(matches!(
        encode_policy_tokens(&[1], &[0.7], Some(&preds(1)), &c),
        Err(Error::Encoding(_))
    ));
    assert!(matches!(encode_policy_tokens(&[1], &[0.7], None, &c), Err(Error::Encoding(_))));
    let p = cfg(HeadKind::RewardVector, false);
    assert!(matches!(encode_predictor_tokens(&[3], &[0.7], &p), Err(Error::Encoding(_))));
}

#[test]
fn policy_rows_are_distributions() {
    let c = cfg(HeadKind::ActionLogits, true);
    let params = init_params(&c, 1).unwrap();
    let (a, r) = history();
    let t = encode_policy_tokens(&a, &r, Some(&preds(5)), &c).unwrap();
    let out = policy_forward(&params, &t).unwrap();
    assert_eq!(out.len(), 5);
    for row in &out {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p > 0.0));
    }
    assert_eq!(out, policy_forward(&params, &t).unwrap());
}

fn perturb_after(t: &TokenSequence, from: usize) -> TokenSequence {
    let mut u = t.clone();
    for r in from..u.rows() {
        for v in u.row_mut(r) {
            *v = *v * -3.0 + 0.25;
        }
    }
    u
}

#[test]
fn both_models_are_causal() {
    let (a, r) = history();
    let pc = cfg(HeadKind::ActionLogits, true);
    let pol = init_params(&pc, 2).unwrap();
    let t = encode_policy_tokens(&a, &r, Some(&preds(5)), &pc).unwrap();
    let qc = cfg(HeadKind::RewardVector, false);
    let pred = init_params(&qc, 3).unwrap();
    let s = encode_predictor_tokens(&a, &r, &qc).unwrap();
    for j in 0..5 {
        let base = policy_forward(&pol, &t).unwrap();
        let moved = policy_forward(&pol, &perturb_after(&t, j + 1)).unwrap();
        assert_eq!(base[..=j], moved[..=j]);
        let base = predictor_forward(&pred, &s).unwrap();
        let moved = predictor_forward(&pred, &perturb_after(&s, j + 1)).unwrap();
        assert_eq!(base[..=j], moved[..=j]);
    }
}

#[test]
fn predictor_output_shape_and_zero_head() {
    let c = cfg(HeadKind::RewardVector, false);
    let mut params = init_params(&c, 4).unwrap();
    let (a, r) = history();
    let t = encode_predictor_tokens(&a, &r, &c).unwrap();
    let out = predictor_forward(&params, &t).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|row| row.len() == 3));
    params.get_mut("head.weight").unwrap().data_mut().fill(0.0);
    let out = predictor_forward(&params, &t).unwrap();
    assert!(out.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn init_is_seeded() {
    let c = cfg(HeadKind::ActionLogits, false);
    assert_eq!(init_params(&c, 5).unwrap(), init_params(&c, 5).unwrap());
    assert_ne!(init_params(&c, 5).unwrap(), init_params(&c, 6).unwrap());
    let p = init_params(&c, 5).unwrap();
    assert!(p.is_finite());
    assert!(p.get("layer1.ln2.gain").unwrap().data().iter().all(|&v| v == 1.0));
    assert!(p.get("layer0.attn.out.bias").unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn parameter_counts() {
    let c = ModelConfig {
        embed_dim: 32,
        num_layers: 4,
        num_heads: 4,
        num_arms: 3,
        max_seq_len: 101,
        head_kind: HeadKind::ActionLogits,
        prediction_features: true,
    };
    assert_eq!(c.param_count(), 54_467);
    let dpt = ModelConfig {
        prediction_features: false,
        ..c.clone()
    };
    assert_eq!(dpt.param_count(), 54_467 - 3 * 32);
    assert_eq!(init_params(&c, 0).unwrap().flat().len(), c.param_count());
}

#[test]
fn invalid_configs() {
    let mut c = cfg(HeadKind::ActionLogits, false);
    c.num_heads = 3;
    assert!(init_params(&c, 0).is_err());
    let c = cfg(HeadKind::RewardVector, true);
    assert!(c.validate().is_err());
    assert!(cfg(HeadKind::ActionLogits, false).check_horizon(6).is_err());
    assert!(cfg(HeadKind::ActionLogits, false).check_horizon(5).is_ok());
}

#[test]
fn session_matches_batch_forward() {
    let (a, r) = history();
    let pc = cfg(HeadKind::ActionLogits, true);
    let pol = init_params(&pc, 7).unwrap();
    let t = encode_policy_tokens(&a, &r, Some(&preds(5)), &pc).unwrap();
    let batch = head_outputs(&pol, &[&t]).unwrap().remove(0);
    let mut s = Session::new(&pol);
    for (i, want) in batch.iter().enumerate() {
        let got = s.push(t.row(i)).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "row {i}: {g} vs {w}");
        }
    }
    assert_eq!(s.len(), 5);
    s.push(t.row(0)).unwrap();
    assert!(s.push(t.row(0)).is_err());
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let c = cfg(HeadKind::RewardVector, false);
    let p = init_params(&c, 8).unwrap();
    let bytes = checkpoint_bytes(&p);
    assert_eq!(parse_checkpoint(&bytes).unwrap(), p);
    assert!(matches!(parse_checkpoint(&bytes[..bytes.len() - 9]), Err(Error::Checksum(_))));
    let mut future = bytes.clone();
    future[8] = 9;
    assert!(matches!(parse_checkpoint(&future), Err(Error::Version { found: 9, .. })));
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&p, dir.path().join("p.ckpt")).unwrap();
    assert_eq!(load_checkpoint(dir.path().join("p.ckpt")).unwrap(), p);
}
