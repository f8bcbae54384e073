//! Binary dataset container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "PPTLABDS"
//! format_version u32
//! config_len     u32
//! config         config_len bytes of canonical JSON (generation parameters)
//! num_episodes   u32
//! num_arms       u32
//! horizon        u32
//! episodes       num_episodes records of
//!                  optimal_arm u32, env_sigma f64,
//!                  true_means  f64 x num_arms, proxy_means f64 x num_arms,
//!                  actions     u32 x horizon,  rewards     f64 x horizon,
//!                  action_probs f64 x (horizon * num_arms)
//! crc32          u32 over every preceding byte
//! ```

use std::path::Path;

use super::{Episode, GenConfig, PretrainDataset};
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PPTLABDS";

/// Encodes a dataset into the container format.
pub fn dataset_bytes(ds: &PretrainDataset) -> Result<Vec<u8>> {
    let k = ds.gen_config.num_arms;
    let n = ds.gen_config.horizon;
    let mut w = Writer::new(MAGIC, ds.format_version);
    w.bytes_with_len(ds.gen_config.canonical_json().as_bytes());
    w.u32(ds.episodes.len() as u32);
    w.u32(k as u32);
    w.u32(n as u32);
    for ep in &ds.episodes {
        if ep.horizon() != n || ep.num_arms() != k || ep.action_probs.len() != n {
            return Err(Error::Format("episode shape disagrees with dataset configuration".into()));
        }
        w.u32(ep.optimal_arm as u32);
        w.f64(ep.env_sigma);
        w.f64s(&ep.true_means);
        w.f64s(&ep.proxy_means);
        for &a in &ep.actions {
            w.u32(a as u32);
        }
        w.f64s(&ep.rewards);
        for p in &ep.action_probs {
            w.f64s(p);
        }
    }
    Ok(w.finish())
}

pub fn save_dataset(ds: &PretrainDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = dataset_bytes(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PretrainDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

pub(crate) fn parse_dataset(bytes: &[u8]) -> Result<PretrainDataset> {
    let (mut r, version) = Reader::open(bytes, MAGIC, DATASET_FORMAT_VERSION, "dataset")?;
    let config_text = r.bytes_with_len()?;
    let gen_config: GenConfig = serde_json::from_slice(config_text)
        .map_err(|e| Error::Format(format!("dataset configuration block: {e}")))?;
    let count = r.u32()? as usize;
    let k = r.u32()? as usize;
    let n = r.u32()? as usize;
    if k != gen_config.num_arms || n != gen_config.horizon {
        return Err(Error::Format("array dimensions disagree with configuration block".into()));
    }
    let mut episodes = Vec::with_capacity(count);
    for _ in 0..count {
        let optimal_arm = r.u32()? as usize;
        let env_sigma = r.f64()?;
        let true_means = r.f64s(k)?;
        let proxy_means = r.f64s(k)?;
        let actions = (0..n).map(|_| r.u32().map(|a| a as usize)).collect::<Result<Vec<_>>>()?;
        if let Some(&bad) = actions.iter().find(|&&a| a >= k) {
            return Err(Error::Format(format!("action {bad} out of range for {k} arms")));
        }
        let rewards = r.f64s(n)?;
        let action_probs = (0..n).map(|_| r.f64s(k)).collect::<Result<Vec<_>>>()?;
        episodes.push(Episode {
            actions,
            rewards,
            action_probs,
            optimal_arm,
            true_means,
            proxy_means,
            env_sigma,
        });
    }
    r.expect_end()?;
    Ok(PretrainDataset {
        episodes,
        gen_config,
        format_version: version,
    })
}
