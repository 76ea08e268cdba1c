//! On-disk tensor store: a JSON manifest plus one raw little-endian buffer
//! file per tensor, listed in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub precision: String,
    pub step: u64,
    /// Caller-defined configuration echoed into the checkpoint.
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn file_name(index: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{clean}.bin")
}

pub fn save<T: Scalar>(
    dir: &Path,
    params: &ParamSet<T>,
    step: u64,
    metadata: serde_json::Value,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    for (i, (name, tensor)) in params.iter().enumerate() {
        let file = file_name(i, name);
        let mut bytes = Vec::with_capacity(tensor.numel() * T::BYTES);
        for &v in tensor.data() {
            v.write_le(&mut bytes);
        }
        fs::write(dir.join(&file), bytes)?;
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        precision: T::PRECISION.to_string(),
        step,
        metadata,
        tensors: entries,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text)
        .map_err(|e| AutodiffError::CorruptCheckpoint(format!("unreadable manifest: {e}")))
}

pub fn load<T: Scalar>(dir: &Path) -> Result<(Manifest, ParamSet<T>)> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(AutodiffError::VersionMismatch(format!(
            "format_version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.precision != T::PRECISION {
        return Err(AutodiffError::VersionMismatch(format!(
            "precision {} (expected {})",
            manifest.precision,
            T::PRECISION
        )));
    }
    let mut params = ParamSet::new();
    for entry in &manifest.tensors {
        let bytes = fs::read(dir.join(&entry.file)).map_err(|e| {
            AutodiffError::CorruptCheckpoint(format!("missing buffer {}: {e}", entry.file))
        })?;
        let numel: usize = entry.shape.iter().product();
        if bytes.len() != numel * T::BYTES {
            return Err(AutodiffError::CorruptCheckpoint(format!(
                "tensor `{}` expects {} bytes, buffer has {}",
                entry.name,
                numel * T::BYTES,
                bytes.len()
            )));
        }
        let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
    }
    Ok((manifest, params))
}
