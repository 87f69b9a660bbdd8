//! Versioned JSON checkpoint container.
//!
//! Matrices are stored row-major with shape headers plus the init seed;
//! loading reproduces sampling bit-for-bit given the same rng state (f64
//! round-trips exactly through the JSON encoder).

use super::{PolicyDims, PolicyParams, Tensors};
use crate::error::{Result, VisplayError};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// "questioner", "reasoner" or "base".
    pub role: String,
    /// Global training step at which the snapshot was taken.
    pub step: u64,
    pub init_seed: u64,
    pub dims: PolicyDims,
    pub data: Vec<f64>,
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams, role: &str, step: u64) -> Result<()> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        role: role.to_string(),
        step,
        init_seed: params.init_seed,
        dims: params.dims(),
        data: params.tensors.data.clone(),
    };
    let mut bytes = serde_json::to_vec(&ckpt)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, Checkpoint)> {
    let bytes = std::fs::read(path)?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(VisplayError::VersionMismatch {
            found: ckpt.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if ckpt.data.len() != ckpt.dims.n_params() {
        return Err(VisplayError::Domain(format!(
            "checkpoint data length {} does not match dims ({} params)",
            ckpt.data.len(),
            ckpt.dims.n_params()
        )));
    }
    let params = PolicyParams {
        init_seed: ckpt.init_seed,
        tensors: Tensors {
            dims: ckpt.dims,
            data: ckpt.data.clone(),
        },
    };
    Ok((params, ckpt))
}
