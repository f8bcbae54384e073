//! C interface to ppt-lab.
//!
//! Every fallible call returns a [`PptStatus`]; on failure the message is
//! available from [`ppt_last_error_message`] on the calling thread. Objects
//! are opaque handles created by `*_new`/`*_load`/`*_generate` and released
//! with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ppt_lab::bandit::{build_dataset, load_dataset, save_dataset, BanditEnv, GenConfig, PretrainDataset};
use ppt_lab::eval::{self, ActionMode, Rollout, RolloutRng};
use ppt_lab::models::{load_checkpoint, ModelParams};
use ppt_lab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PptStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

impl From<&Error> for PptStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Encoding(_) | Error::Index { .. } | Error::Dimension { .. } => PptStatus::InvalidArgument,
            Error::Io { .. } => PptStatus::Io,
            Error::Checksum(_) | Error::Version { .. } | Error::Format(_) => PptStatus::Format,
            Error::Numeric(_) | Error::Divergence { .. } => PptStatus::Numeric,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(PptStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PptStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PptStatus::NullArgument, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PptStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PptStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PptStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PptStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, capacity: usize) -> Result<(), Failure> {
    if src.len() > capacity {
        return Err(Failure(
            PptStatus::BufferTooSmall,
            format!("buffer holds {capacity} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ppt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Offline pretraining dataset.
pub struct PptDataset(PretrainDataset);

/// Generates a dataset from the `"ideal"` or `"tricky"` preset.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_generate(preset: *const c_char, num_envs: usize, seed: u64, out: *mut *mut PptDataset) -> PptStatus {
    guard(|| {
        let cfg = GenConfig::from_preset(text(preset, "preset")?, num_envs, seed)?;
        emit(out, PptDataset(build_dataset(&cfg)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_load(path: *const c_char, out: *mut *mut PptDataset) -> PptStatus {
    guard(|| emit(out, PptDataset(load_dataset(text(path, "path")?)?)))
}

/// # Safety
/// `dataset` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_save(dataset: *const PptDataset, path: *const c_char) -> PptStatus {
    guard(|| Ok(save_dataset(&borrow(dataset, "dataset")?.0, text(path, "path")?)?))
}

/// Number of episodes; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_len(dataset: *const PptDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_num_arms(dataset: *const PptDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_arms())
}

/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_horizon(dataset: *const PptDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.horizon())
}

/// Copies one episode. `actions` and `rewards` must hold `horizon` values,
/// `true_means` must hold `num_arms` values.
///
/// # Safety
/// Buffers must be writable for the capacities given.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_episode(
    dataset: *const PptDataset,
    index: usize,
    actions: *mut u32,
    rewards: *mut f64,
    capacity: usize,
    true_means: *mut f64,
    num_arms: usize,
    optimal_arm: *mut u32,
) -> PptStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.0;
        let ep = ds.episodes.get(index).ok_or(Error::Index { index, len: ds.len() })?;
        let acts: Vec<u32> = ep.actions.iter().map(|&a| a as u32).collect();
        copy_out(&acts, actions, capacity)?;
        copy_out(&ep.rewards, rewards, capacity)?;
        copy_out(&ep.true_means, true_means, num_arms)?;
        copy_out(&[ep.optimal_arm as u32], optimal_arm, 1)
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppt_dataset_free(dataset: *mut PptDataset) {
    release(dataset)
}

/// Gaussian bandit with per-arm means and shared variance.
pub struct PptEnv(BanditEnv);

/// # Safety
/// `means` must hold `num_arms` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ppt_env_new(means: *const f64, num_arms: usize, sigma2: f64, horizon: usize, out: *mut *mut PptEnv) -> PptStatus {
    guard(|| {
        if means.is_null() {
            return Err(null("means"));
        }
        if !(sigma2 >= 0.0) {
            return Err(Failure(PptStatus::InvalidArgument, format!("variance must be >= 0, got {sigma2}")));
        }
        let means = std::slice::from_raw_parts(means, num_arms).to_vec();
        emit(out, PptEnv(BanditEnv::new(means, sigma2.sqrt(), horizon)?))
    })
}

/// # Safety
/// `env` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppt_env_free(env: *mut PptEnv) {
    release(env)
}

/// Transformer checkpoint (policy or reward predictor).
pub struct PptModel(ModelParams);

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ppt_model_load(path: *const c_char, out: *mut *mut PptModel) -> PptStatus {
    guard(|| emit(out, PptModel(load_checkpoint(text(path, "path")?)?)))
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppt_model_num_arms(model: *const PptModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().num_arms)
}

/// Longest rollout the model can run; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppt_model_max_horizon(model: *const PptModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().max_seq_len)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppt_model_free(model: *mut PptModel) {
    release(model)
}

/// One online episode.
pub struct PptRollout(Rollout);

/// UCB with exploration weight `beta`. `seed` and `env_index` select the
/// reward-noise stream, shared by every agent run on the same pair.
///
/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_ucb(env: *const PptEnv, beta: f64, seed: u64, env_index: u64, out: *mut *mut PptRollout) -> PptStatus {
    guard(|| {
        let env = &borrow(env, "env")?.0;
        let r = eval::ucb_rollout(env, beta, env.horizon(), &mut RolloutRng::new(seed, env_index))?;
        emit(out, PptRollout(r))
    })
}

/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_random(env: *const PptEnv, seed: u64, env_index: u64, out: *mut *mut PptRollout) -> PptStatus {
    guard(|| {
        let env = &borrow(env, "env")?.0;
        emit(out, PptRollout(eval::random_rollout(env, env.horizon(), &mut RolloutRng::new(seed, env_index))))
    })
}

/// Runs a pretrained policy online. `predictor` may be null for policies
/// that take no reward estimates. `greedy` picks the most likely action
/// instead of sampling.
///
/// # Safety
/// Handles must be live (or null for `predictor`) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_deploy(
    policy: *const PptModel,
    predictor: *const PptModel,
    env: *const PptEnv,
    seed: u64,
    env_index: u64,
    greedy: bool,
    out: *mut *mut PptRollout,
) -> PptStatus {
    guard(|| {
        let policy = &borrow(policy, "policy")?.0;
        let predictor = predictor.as_ref().map(|p| &p.0);
        let env = &borrow(env, "env")?.0;
        let mode = if greedy { ActionMode::Greedy } else { ActionMode::Sample };
        let r = eval::deploy(policy, predictor, env, env.horizon(), &mut RolloutRng::new(seed, env_index), mode)?;
        emit(out, PptRollout(r))
    })
}

/// # Safety
/// `rollout` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_horizon(rollout: *const PptRollout) -> usize {
    rollout.as_ref().map_or(0, |r| r.0.horizon())
}

/// # Safety
/// `out` must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_actions(rollout: *const PptRollout, out: *mut u32, capacity: usize) -> PptStatus {
    guard(|| {
        let acts: Vec<u32> = borrow(rollout, "rollout")?.0.actions.iter().map(|&a| a as u32).collect();
        copy_out(&acts, out, capacity)
    })
}

/// # Safety
/// `out` must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_rewards(rollout: *const PptRollout, out: *mut f64, capacity: usize) -> PptStatus {
    guard(|| copy_out(&borrow(rollout, "rollout")?.0.rewards, out, capacity))
}

/// Expected per-step gap to the best arm under the recorded action
/// distributions.
///
/// # Safety
/// `out` must be writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_suboptimality(rollout: *const PptRollout, out: *mut f64, capacity: usize) -> PptStatus {
    guard(|| copy_out(&eval::suboptimality(&borrow(rollout, "rollout")?.0), out, capacity))
}

/// # Safety
/// `rollout` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppt_rollout_free(rollout: *mut PptRollout) {
    release(rollout)
}

unsafe fn collect<'a>(rollouts: *const *const PptRollout, count: usize) -> Result<Vec<&'a Rollout>, Failure> {
    if rollouts.is_null() {
        return Err(null("rollouts"));
    }
    std::slice::from_raw_parts(rollouts, count)
        .iter()
        .map(|&r| borrow(r, "rollout").map(|r| &r.0))
        .collect()
}

unsafe fn curve(
    rollouts: *const *const PptRollout,
    count: usize,
    out: *mut f64,
    capacity: usize,
    metric: fn(&[Rollout]) -> ppt_lab::Result<Vec<f64>>,
) -> PptStatus {
    guard(|| {
        let owned: Vec<Rollout> = collect(rollouts, count)?.into_iter().cloned().collect();
        copy_out(&metric(&owned)?, out, capacity)
    })
}

/// Average suboptimality at every step across `count` equal-length rollouts.
///
/// # Safety
/// `rollouts` must point to `count` live handles; `out` must be writable for
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ppt_avg_suboptimality(rollouts: *const *const PptRollout, count: usize, out: *mut f64, capacity: usize) -> PptStatus {
    curve(rollouts, count, out, capacity, eval::avg_suboptimality)
}

/// Average cumulative regret at every step.
///
/// # Safety
/// As for [`ppt_avg_suboptimality`].
#[no_mangle]
pub unsafe extern "C" fn ppt_avg_regret(rollouts: *const *const PptRollout, count: usize, out: *mut f64, capacity: usize) -> PptStatus {
    curve(rollouts, count, out, capacity, eval::avg_regret)
}

/// Squared distance between the deployed predictor's estimates and the true
/// means at every step, averaged over rollouts.
///
/// # Safety
/// As for [`ppt_avg_suboptimality`].
#[no_mangle]
pub unsafe extern "C" fn ppt_online_prediction_loss(rollouts: *const *const PptRollout, count: usize, out: *mut f64, capacity: usize) -> PptStatus {
    curve(rollouts, count, out, capacity, eval::online_prediction_loss)
}
