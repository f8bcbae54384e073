use super::*;
use crate::bandit::{build_dataset, GenConfig};
use crate::models::HeadKind;

fn tiny_shape() -> ModelShape {
    ModelShape {
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
    }
}

fn tiny_dataset(num_envs: usize, horizon: usize, seed: u64) -> PretrainDataset {
    build_dataset(&GenConfig {
        horizon,
        ..GenConfig::ideal(num_envs, seed)
    })
    .unwrap()
}

fn batch(ds: &PretrainDataset) -> Vec<&Episode> {
    ds.episodes.iter().collect()
}

fn with_head(mut p: ModelParams, weight: f64, bias: &[f64]) -> ModelParams {
    p.get_mut("head.weight").unwrap().data_mut().fill(weight);
    p.get_mut("head.bias").unwrap().data_mut().copy_from_slice(bias);
    p
}

#[test]
fn curiosity_vector_examples() {
    let e = curiosity_vector(&[0.5, 0.5, 0.5], &[0.5, 0.7, 0.1]).unwrap();
    for (g, w) in e.iter().zip([0.0, 0.04, 0.16]) {
        assert!((g - w).abs() < 1e-15);
    }
    assert_eq!(curiosity_vector(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), vec![0.0, 0.0]);
    assert_eq!(
        curiosity_vector(&[-0.5, -0.2], &[-0.1, -0.9]).unwrap(),
        curiosity_vector(&[0.5, 0.2], &[0.1, 0.9]).unwrap()
    );
    assert!(curiosity_vector(&[0.1], &[0.1, 0.2]).is_err());
}

#[test]
fn perfect_policy_has_zero_nll() {
    let ds = tiny_dataset(4, 5, 1);
    let cfg = tiny_shape().policy_config(3, 5, Algorithm::Dpt);
    for ep in &ds.episodes {
        let mut bias = [0.0; 3];
        bias[ep.optimal_arm] = 1000.0;
        let p = with_head(init_params(&cfg, 1).unwrap(), 0.0, &bias);
        let out = dpt_loss(&p, &[ep], None, 4).unwrap();
        assert_eq!(out.value, 0.0);
    }
}

#[test]
fn uniform_policy_nll_is_n_log_k() {
    let ds = tiny_dataset(3, 100, 2);
    let cfg = tiny_shape().policy_config(3, 100, Algorithm::Dpt);
    let p = with_head(init_params(&cfg, 2).unwrap(), 0.0, &[0.0; 3]);
    let out = dpt_loss(&p, &batch(&ds), None, 2).unwrap();
    assert!((out.value - 100.0 * 3f64.ln()).abs() < 1e-10, "{}", out.value);
}

#[test]
fn predictor_loss_examples() {
    let mut ds = tiny_dataset(1, 2, 3);
    ds.episodes[0].true_means = vec![0.5, 0.5, 0.5];
    let cfg = tiny_shape().predictor_config(3, 2);
    let zero = with_head(init_params(&cfg, 3).unwrap(), 0.0, &[0.0; 3]);
    let out = predictor_loss(&zero, &batch(&ds), ContextTarget::GroundTruth, 8).unwrap();
    assert!((out.value - 1.5).abs() < 1e-15);

    let exact = with_head(init_params(&cfg, 3).unwrap(), 0.0, &[0.5; 3]);
    let out = predictor_loss(&exact, &batch(&ds), ContextTarget::GroundTruth, 8).unwrap();
    assert_eq!(out.value, 0.0);

    let proxy = ds.episodes[0].proxy_means.clone();
    let expected: f64 = 2.0 * proxy.iter().map(|c| c * c).sum::<f64>();
    let out = predictor_loss(&zero, &batch(&ds), ContextTarget::Proxy(ProxyEstimator::HorizonMean), 8).unwrap();
    assert!((out.value - expected).abs() < 1e-15);
}

#[test]
fn zero_lambda_reduces_to_nll() {
    let ds = tiny_dataset(6, 4, 4);
    let b = batch(&ds);
    let pol = init_params(&tiny_shape().policy_config(3, 4, Algorithm::Ppt), 5).unwrap();
    let pred = init_params(&tiny_shape().predictor_config(3, 4), 6).unwrap();
    let out = ppt_policy_loss(&pol, &pred, &b, 0.0, ContextTarget::GroundTruth, 4).unwrap();
    assert_eq!(out.value, out.nll);
    assert!(out.bonus > 0.0);
    let predictions = predict_batch(&pred, &b).unwrap();
    let dpt = dpt_loss(&pol, &b, Some(&predictions), 4).unwrap();
    assert!((dpt.value - out.value).abs() < 1e-12);
}

#[test]
fn zero_curiosity_leaves_only_nll() {
    let ds = tiny_dataset(3, 4, 7);
    let b = batch(&ds);
    let pol = init_params(&tiny_shape().policy_config(3, 4, Algorithm::Ppt), 8).unwrap();
    let predictions = predict_batch(&init_params(&tiny_shape().predictor_config(3, 4), 9).unwrap(), &b).unwrap();
    let zeros: PerPosition = predictions.iter().map(|e| e.iter().map(|c| vec![0.0; c.len()]).collect()).collect();
    for lambda in [0.0, 100.0, 500.0] {
        let out = policy_objective(&pol, &b, Some(&predictions), Some(&zeros), lambda, 2).unwrap();
        assert_eq!(out.value, out.nll);
    }
}

#[test]
fn losses_match_finite_differences() {
    for check in crate::diagnostics::loss_checks(10, 200.0).unwrap() {
        assert!(check.passed(), "{check:?}");
    }
}

#[test]
fn sharding_does_not_change_losses_beyond_rounding() {
    let ds = tiny_dataset(7, 4, 14);
    let b = batch(&ds);
    let pred = init_params(&tiny_shape().predictor_config(3, 4), 15).unwrap();
    let a = predictor_loss(&pred, &b, ContextTarget::GroundTruth, 1).unwrap();
    let c = predictor_loss(&pred, &b, ContextTarget::GroundTruth, 7).unwrap();
    assert!((a.value - c.value).abs() < 1e-12);
    assert_eq!(a.predictions.len(), 7);
    for (x, y) in a.predictions.iter().flatten().flatten().zip(c.predictions.iter().flatten().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn tiny_train_cfg(algorithm: Algorithm, lambda: f64, steps: usize) -> TrainConfig {
    TrainConfig {
        algorithm,
        lambda,
        batch_size: 16,
        steps,
        shard_size: 8,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn predictor_updates_ignore_the_policy_objective() {
    let ds = tiny_dataset(32, 6, 16);
    let run = |lambda| {
        train(&ds, &tiny_shape(), &tiny_shape(), &tiny_train_cfg(Algorithm::Ppt, lambda, 4), None, None).unwrap()
    };
    let (a, b) = (run(0.0), run(500.0));
    assert_eq!(a.predictor, b.predictor);
    assert_ne!(a.policy, b.policy);
}

#[test]
fn frozen_predictor_is_never_updated() {
    let ds = tiny_dataset(32, 6, 17);
    let pred = init_params(&tiny_shape().predictor_config(3, 6), 18).unwrap();
    let cfg = TrainConfig {
        predictor_mode: PredictorMode::PretrainedFrozen,
        ..tiny_train_cfg(Algorithm::Ppt, 200.0, 3)
    };
    let out = train(&ds, &tiny_shape(), &tiny_shape(), &cfg, Some(pred.clone()), None).unwrap();
    assert_eq!(out.predictor.unwrap(), pred);
    assert!(out.log.rows.iter().all(|r| r.predictor_loss.is_none()));
    assert!(train(&ds, &tiny_shape(), &tiny_shape(), &cfg, None, None).is_err());
}

#[test]
fn training_is_reproducible_and_logs_every_step() {
    let ds = tiny_dataset(40, 6, 19);
    let cfg = tiny_train_cfg(Algorithm::Ppt, 200.0, 5);
    let a = train(&ds, &tiny_shape(), &tiny_shape(), &cfg, None, None).unwrap();
    let b = train(&ds, &tiny_shape(), &tiny_shape(), &cfg, None, None).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.predictor, b.predictor);
    assert_eq!(a.log.rows.len(), 5);
    for r in &a.log.rows {
        assert!(r.nll_term >= 0.0 && r.curiosity_term >= 0.0 && r.predictor_loss.unwrap() >= 0.0);
    }
    let csv = a.log.to_csv();
    assert!(csv.starts_with(TrainLog::CSV_HEADER));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn training_is_independent_of_thread_count() {
    let ds = tiny_dataset(40, 6, 20);
    let cfg = tiny_train_cfg(Algorithm::Ppt, 100.0, 3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&ds, &tiny_shape(), &tiny_shape(), &cfg, None, None).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.predictor, b.predictor);
}

#[test]
fn dpt_training_has_no_predictor() {
    let ds = tiny_dataset(20, 5, 21);
    let out = train(&ds, &tiny_shape(), &tiny_shape(), &tiny_train_cfg(Algorithm::Dpt, 0.0, 2), None, None).unwrap();
    assert!(out.predictor.is_none());
    assert!(!out.policy.config().prediction_features);
    assert_eq!(out.policy.config().head_kind, HeadKind::ActionLogits);
    assert!(out.log.rows.iter().all(|r| r.curiosity_term == 0.0));
}

#[test]
fn predictor_epoch_loss_decreases() {
    // 64 episodes in batches of 16: four steps per epoch, six epochs.
    let ds = tiny_dataset(64, 10, 22);
    let cfg = tiny_train_cfg(Algorithm::Ppt, 200.0, 25);
    let out = train(&ds, &tiny_shape(), &tiny_shape(), &cfg, None, None).unwrap();
    let e = &out.log.epoch_predictor_loss;
    assert_eq!(e.len(), 6);
    for w in e.windows(2) {
        assert!(w[1] < w[0], "{e:?}");
    }
}

#[test]
fn divergence_guard() {
    let mut g = Guard {
        factor: 10.0,
        patience: 3,
        initial: None,
        strikes: 0,
    };
    g.check(0, 1.0, Some(1.0)).unwrap();
    g.check(1, 11.0, Some(1.0)).unwrap();
    g.check(2, 1.0, Some(11.0)).unwrap();
    g.check(3, 1.0, Some(1.0)).unwrap();
    assert_eq!(g.strikes, 0);
    g.check(4, 20.0, None).unwrap();
    g.check(5, 20.0, None).unwrap();
    assert!(matches!(g.check(6, 20.0, None), Err(Error::Divergence { step: 6, .. })));
    assert!(matches!(g.check(7, f64::NAN, None), Err(Error::Divergence { .. })));
}

#[test]
fn config_validation_and_labels() {
    assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    assert_eq!(tiny_train_cfg(Algorithm::Ppt, 200.0, 1).label(), "PPT_200.0");
    assert_eq!(tiny_train_cfg(Algorithm::Dpt, 0.0, 1).label(), "DPT");
    let proxy = TrainConfig {
        context_mode: ContextMode::Proxy,
        ..tiny_train_cfg(Algorithm::Ppt, 0.0, 1)
    };
    assert_eq!(proxy.label(), "PPT_0.0_proxy");
}

#[test]
fn checkpoints_written_to_out_dir() {
    let ds = tiny_dataset(20, 5, 23);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 1,
        ..tiny_train_cfg(Algorithm::Ppt, 100.0, 2)
    };
    let out = train(&ds, &tiny_shape(), &tiny_shape(), &cfg, None, Some(dir.path())).unwrap();
    let pol = crate::models::load_checkpoint(dir.path().join(POLICY_CHECKPOINT)).unwrap();
    assert_eq!(pol, out.policy);
    assert!(dir.path().join(PREDICTOR_CHECKPOINT).exists());
}
