//! Checkpoint directory: `checkpoint.json` (config, seed, tensor table) and
//! `weights.f32` (little-endian f32 tensors concatenated in table order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::wpnet::{NamedTensor, OutputScaling, WpnetConfig, WpnetParams};
use crate::dataio::{read_f32_le, write_f32_le};
use crate::error::{Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const CHECKPOINT_WEIGHTS: &str = "weights.f32";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: WpnetConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_scaling: Option<OutputScaling>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<T: Scalar>(params: &WpnetParams<T>, dir: &Path) -> Result<()> {
    if !dir.exists() {
        fs::create_dir(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut offset = 0;
    let tensors = params
        .tensors
        .iter()
        .map(|t| {
            let e = TensorEntry { name: t.name.clone(), shape: t.shape.clone(), offset };
            offset += t.data.len();
            e
        })
        .collect();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        seed: params.seed,
        output_scaling: params.output_scaling.clone(),
        tensors,
    };
    let path = dir.join(CHECKPOINT_MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json { path: path.clone(), source: e })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_f32_le(
        &dir.join(CHECKPOINT_WEIGHTS),
        params.tensors.iter().flat_map(|t| t.data.iter().map(|v| v.as_f64() as f32)),
    )
}

pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<WpnetParams<T>> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::CorruptDataset(format!("unsupported checkpoint version {}", manifest.format_version)));
    }
    let total: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let payload = read_f32_le(&dir.join(CHECKPOINT_WEIGHTS), total * 4)?;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let data = payload
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::CorruptDataset(format!("tensor `{}` runs past the payload", e.name)))?
            .iter()
            .map(|&v| T::of_f64(v as f64))
            .collect();
        tensors.push(NamedTensor { name: e.name, shape: e.shape, data });
    }
    let mut params = WpnetParams::from_tensors(manifest.config, manifest.seed, tensors)?;
    if let Some(s) = &manifest.output_scaling {
        if s.mean.len() != 2 * params.config.n_landmarks || !(s.scale > 0.0 && s.scale.is_finite()) {
            return Err(Error::CorruptDataset("checkpoint output scaling does not match the network".into()));
        }
    }
    params.output_scaling = manifest.output_scaling;
    Ok(params)
}
