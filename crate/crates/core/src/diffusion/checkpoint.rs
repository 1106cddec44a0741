//! Denoiser checkpoints: a weights file plus a JSON sidecar describing the
//! architecture and training provenance.

use super::unet::{DenoiserCfg, ToyDenoiser};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub cfg: DenoiserCfg,
    pub init_seed: u64,
    pub trained_steps: usize,
    pub dataset_seed: u64,
    pub dataset_scenes: usize,
    pub final_loss: f64,
}

pub fn save_checkpoint(dir: &Path, model: &ToyDenoiser, meta: &CheckpointMeta) -> Result<()> {
    if meta.cfg != model.cfg {
        return Err(Error::Checkpoint("meta does not describe this model".into()));
    }
    fs::create_dir_all(dir)?;
    model
        .varmap()
        .save(dir.join(WEIGHTS_FILE))
        .map_err(|e| Error::Checkpoint(format!("saving weights: {e}")))?;
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(ToyDenoiser, CheckpointMeta)> {
    let meta_path = dir.join(META_FILE);
    let weights_path = dir.join(WEIGHTS_FILE);
    if !meta_path.exists() {
        return Err(Error::MissingInput(meta_path));
    }
    if !weights_path.exists() {
        return Err(Error::MissingInput(weights_path));
    }
    let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    let mut model = ToyDenoiser::new(meta.cfg.clone(), meta.init_seed)?;
    model.load_weights(&weights_path)?;
    Ok((model, meta))
}
