//! Checkpoint container: magic `PPTLABCK`, format version, model
//! configuration as canonical JSON, parameter count (u64), then every
//! parameter as little-endian f64 in declaration order, then CRC32.

use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PPTLABCK";

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut w = Writer::new(MAGIC, CHECKPOINT_FORMAT_VERSION);
    let json = serde_json::to_string(params.config()).expect("config serializes");
    w.bytes_with_len(json.as_bytes());
    w.u64(params.config().param_count() as u64);
    for t in params.tensors() {
        w.f64s(t.data());
    }
    w.finish()
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let (mut r, _) = Reader::open(bytes, MAGIC, CHECKPOINT_FORMAT_VERSION, "checkpoint")?;
    let config: ModelConfig = serde_json::from_slice(r.bytes_with_len()?)
        .map_err(|e| Error::Format(format!("checkpoint configuration block: {e}")))?;
    config.validate()?;
    let count = r.u64()? as usize;
    if count != config.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, configuration implies {}",
            config.param_count()
        )));
    }
    let tensors = config
        .param_shapes()
        .into_iter()
        .map(|(_, shape)| {
            let len = shape.iter().product();
            Tensor::new(shape, r.f64s(len)?)
        })
        .collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    ModelParams::from_tensors(config, tensors)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
