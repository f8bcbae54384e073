use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ppt_lab::models::{init_params, save_checkpoint};
use ppt_lab::training::{Algorithm, ModelShape};
use ppt_lab_ffi::*;

fn last_error() -> String {
    let p = ppt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn env(means: &[f64], sigma2: f64, horizon: usize) -> *mut PptEnv {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ppt_env_new(means.as_ptr(), means.len(), sigma2, horizon, &mut out) }, PptStatus::Ok);
    out
}

#[test]
fn dataset_round_trip() {
    let preset = CString::new("tricky").unwrap();
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(ppt_dataset_generate(preset.as_ptr(), 5, 3, &mut ds), PptStatus::Ok);
        assert_eq!((ppt_dataset_len(ds), ppt_dataset_num_arms(ds), ppt_dataset_horizon(ds)), (5, 3, 200));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("d.ds").to_str().unwrap()).unwrap();
        assert_eq!(ppt_dataset_save(ds, path.as_ptr()), PptStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ppt_dataset_load(path.as_ptr(), &mut back), PptStatus::Ok);

        let (mut a, mut r, mut m, mut best) = (vec![0u32; 200], vec![0.0; 200], vec![0.0; 3], 0u32);
        let (mut a2, mut r2) = (vec![0u32; 200], vec![0.0; 200]);
        assert_eq!(ppt_dataset_episode(ds, 4, a.as_mut_ptr(), r.as_mut_ptr(), 200, m.as_mut_ptr(), 3, &mut best), PptStatus::Ok);
        assert_eq!(ppt_dataset_episode(back, 4, a2.as_mut_ptr(), r2.as_mut_ptr(), 200, m.as_mut_ptr(), 3, &mut best), PptStatus::Ok);
        assert_eq!((&a, &r), (&a2, &r2));
        let top = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(m[best as usize], top);

        assert_eq!(
            ppt_dataset_episode(ds, 5, a2.as_mut_ptr(), r2.as_mut_ptr(), 200, m.as_mut_ptr(), 3, &mut best),
            PptStatus::InvalidArgument
        );
        assert!(last_error().contains("index 5"));
        assert_eq!(
            ppt_dataset_episode(ds, 0, a2.as_mut_ptr(), r2.as_mut_ptr(), 10, m.as_mut_ptr(), 3, &mut best),
            PptStatus::BufferTooSmall
        );
        ppt_dataset_free(ds);
        ppt_dataset_free(back);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(ppt_dataset_generate(ptr::null(), 5, 0, &mut ds), PptStatus::NullArgument);
        assert!(ds.is_null());
        let bogus = CString::new("bogus").unwrap();
        assert_eq!(ppt_dataset_generate(bogus.as_ptr(), 5, 0, &mut ds), PptStatus::InvalidArgument);
        assert!(last_error().contains("bogus"));
        let missing = CString::new("/nonexistent/x.ds").unwrap();
        assert_eq!(ppt_dataset_load(missing.as_ptr(), &mut ds), PptStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(ppt_model_load(junk.as_ptr(), &mut model), PptStatus::Format);

        let mut e = ptr::null_mut();
        assert_eq!(ppt_env_new([0.1, 0.2].as_ptr(), 2, -1.0, 10, &mut e), PptStatus::InvalidArgument);
        assert_eq!(ppt_env_new([0.1].as_ptr(), 1, 0.1, 0, &mut e), PptStatus::InvalidArgument);

        let env = env(&[0.1, 0.9], 0.3, 10);
        assert_eq!(ppt_env_new([0.1].as_ptr(), 1, 0.1, 10, ptr::null_mut()), PptStatus::NullArgument);
        assert_eq!(ppt_dataset_len(ptr::null()), 0);
        ppt_env_free(env);
        ppt_env_free(ptr::null_mut());

        let ok = CString::new("ideal").unwrap();
        assert_eq!(ppt_dataset_generate(ok.as_ptr(), 1, 0, &mut ds), PptStatus::Ok);
        assert!(ppt_last_error_message().is_null());
        ppt_dataset_free(ds);
    }
}

#[test]
fn baseline_rollouts_and_metrics() {
    unsafe {
        let env = env(&[0.5, 0.9, 0.1], 0.0, 4);
        let mut ucb = ptr::null_mut();
        assert_eq!(ppt_rollout_ucb(env, 1.0, 0, 0, &mut ucb), PptStatus::Ok);
        assert_eq!(ppt_rollout_horizon(ucb), 4);
        let mut actions = [9u32; 4];
        assert_eq!(ppt_rollout_actions(ucb, actions.as_mut_ptr(), 4), PptStatus::Ok);
        assert_eq!(actions, [0, 1, 2, 1]);
        let mut rewards = [0.0; 4];
        assert_eq!(ppt_rollout_rewards(ucb, rewards.as_mut_ptr(), 4), PptStatus::Ok);
        assert_eq!(rewards, [0.5, 0.9, 0.1, 0.9]);
        let mut sub = [0.0; 4];
        assert_eq!(ppt_rollout_suboptimality(ucb, sub.as_mut_ptr(), 4), PptStatus::Ok);
        assert!((sub[0] - 0.4).abs() < 1e-12 && sub[1] == 0.0 && (sub[2] - 0.8).abs() < 1e-12);

        let mut random = ptr::null_mut();
        assert_eq!(ppt_rollout_random(env, 0, 0, &mut random), PptStatus::Ok);
        let pair = [ucb as *const PptRollout, random as *const PptRollout];
        let (mut avg_sub, mut regret) = ([0.0; 4], [0.0; 4]);
        assert_eq!(ppt_avg_suboptimality(pair.as_ptr(), 2, avg_sub.as_mut_ptr(), 4), PptStatus::Ok);
        assert_eq!(ppt_avg_regret(pair.as_ptr(), 2, regret.as_mut_ptr(), 4), PptStatus::Ok);
        let mut running = 0.0;
        for t in 0..4 {
            running += avg_sub[t];
            assert!((regret[t] - running).abs() < 1e-12);
        }
        assert_eq!(ppt_avg_regret(pair.as_ptr(), 2, regret.as_mut_ptr(), 3), PptStatus::BufferTooSmall);
        assert_eq!(ppt_online_prediction_loss(pair.as_ptr(), 2, regret.as_mut_ptr(), 4), PptStatus::InvalidArgument);
        assert_eq!(ppt_rollout_ucb(env, 0.0, 0, 0, &mut random), PptStatus::InvalidArgument);

        ppt_rollout_free(ucb);
        ppt_rollout_free(pair[1] as *mut PptRollout);
        ppt_env_free(env);
    }
}

fn write_models(dir: &Path) -> (CString, CString) {
    let shape = ModelShape {
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
    };
    let policy = dir.join("policy.ckpt");
    let predictor = dir.join("predictor.ckpt");
    save_checkpoint(&init_params(&shape.policy_config(3, 6, Algorithm::Ppt), 1).unwrap(), &policy).unwrap();
    save_checkpoint(&init_params(&shape.predictor_config(3, 6), 2).unwrap(), &predictor).unwrap();
    (
        CString::new(policy.to_str().unwrap()).unwrap(),
        CString::new(predictor.to_str().unwrap()).unwrap(),
    )
}

#[test]
fn deploy_learned_policy() {
    let dir = tempfile::tempdir().unwrap();
    let (policy_path, predictor_path) = write_models(dir.path());
    unsafe {
        let (mut policy, mut predictor) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(ppt_model_load(policy_path.as_ptr(), &mut policy), PptStatus::Ok);
        assert_eq!(ppt_model_load(predictor_path.as_ptr(), &mut predictor), PptStatus::Ok);
        assert_eq!((ppt_model_num_arms(policy), ppt_model_max_horizon(policy)), (3, 7));

        let env = env(&[0.2, 0.4, 0.8], 0.5, 6);
        let mut runs = Vec::new();
        for greedy in [false, false, true] {
            let mut r = ptr::null_mut();
            assert_eq!(ppt_rollout_deploy(policy, predictor, env, 7, 0, greedy, &mut r), PptStatus::Ok);
            runs.push(r as *const PptRollout);
        }
        let mut first = [0u32; 6];
        let mut second = [0u32; 6];
        ppt_rollout_actions(runs[0], first.as_mut_ptr(), 6);
        ppt_rollout_actions(runs[1], second.as_mut_ptr(), 6);
        assert_eq!(first, second);
        let mut loss = [0.0; 6];
        assert_eq!(ppt_online_prediction_loss(runs.as_ptr(), 3, loss.as_mut_ptr(), 6), PptStatus::Ok);
        assert!(loss.iter().all(|l| l.is_finite() && *l >= 0.0));

        let mut r = ptr::null_mut();
        assert_eq!(ppt_rollout_deploy(policy, ptr::null(), env, 7, 0, false, &mut r), PptStatus::InvalidArgument);
        let long = self::env(&[0.2, 0.4, 0.8], 0.5, 8);
        assert_eq!(ppt_rollout_deploy(policy, predictor, long, 7, 0, false, &mut r), PptStatus::InvalidArgument);

        for r in runs {
            ppt_rollout_free(r as *mut PptRollout);
        }
        ppt_env_free(env);
        ppt_env_free(long);
        ppt_model_free(policy);
        ppt_model_free(predictor);
    }
}

#[test]
fn header_declares_the_interface_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ppt_lab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "typedef struct PptDataset PptDataset;",
        "PPT_STATUS_BUFFER_TOO_SMALL = 6",
        "ppt_last_error_message(void)",
        "ppt_rollout_deploy(",
        "ppt_avg_regret(",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).output() else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
