use std::path::Path;

use dope_autodiff::{store, AutodiffError, ParamSet};
use serde_json::{json, Value};

use super::config::RunConfig;
use super::{HarnessError, Result};
use crate::model::{EncoderConfig, EncoderParams};

const ONLINE: &str = "online/";
const TARGET: &str = "target/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub config: RunConfig,
    pub step: u64,
}

/// Writes both encoders and the resolved config to `dir`.
pub fn save_checkpoint(dir: &Path, params: &EncoderParams, config: &RunConfig, step: u64) -> Result<()> {
    let mut all = ParamSet::new();
    for (prefix, set) in [(ONLINE, &params.online), (TARGET, &params.target)] {
        for (name, t) in set.iter() {
            all.insert(format!("{prefix}{name}"), t.clone());
        }
    }
    let meta = json!({
        "model": config.model,
        "seed": config.seed,
        "config": config,
    });
    store::save(dir, &all, step, meta)?;
    Ok(())
}

/// First field of `expected` that differs in `found`, as
/// `model.<field>`.
fn model_mismatch(found: &Value, expected: &EncoderConfig) -> Result<Option<String>> {
    let exp = serde_json::to_value(expected).map_err(|e| HarnessError::Config(e.to_string()))?;
    let (Value::Object(e), Value::Object(f)) = (&exp, found) else {
        return Ok(Some("model".into()));
    };
    for (k, ev) in e {
        match f.get(k) {
            Some(fv) if fv == ev => {}
            Some(fv) => return Ok(Some(format!("model.{k}: checkpoint has {fv}, expected {ev}"))),
            None => return Ok(Some(format!("model.{k}: missing from checkpoint"))),
        }
    }
    Ok(None)
}

/// Loads a checkpoint written for the encoder `expected`.
pub fn load_checkpoint(dir: &Path, expected: &EncoderConfig) -> Result<Checkpoint> {
    let manifest = store::read_manifest(dir)?;
    let found = manifest
        .metadata
        .get("model")
        .ok_or_else(|| AutodiffError::CorruptCheckpoint("manifest lacks the model config".into()))?;
    if let Some(field) = model_mismatch(found, expected)? {
        return Err(AutodiffError::VersionMismatch(field).into());
    }
    let config: RunConfig = serde_json::from_value(manifest.metadata["config"].clone())
        .map_err(|e| AutodiffError::CorruptCheckpoint(format!("embedded config: {e}")))?;
    let (manifest, all) = store::load::<f32>(dir)?;
    let mut online = ParamSet::new();
    let mut target = ParamSet::new();
    for (name, t) in all.iter() {
        if let Some(n) = name.strip_prefix(ONLINE) {
            online.insert(n, t.clone());
        } else if let Some(n) = name.strip_prefix(TARGET) {
            target.insert(n, t.clone());
        } else {
            return Err(AutodiffError::CorruptCheckpoint(format!("unexpected tensor `{name}`")).into());
        }
    }
    let layout = expected.layout();
    for set in [&online, &target] {
        let ok = set.len() == layout.len()
            && layout
                .iter()
                .all(|(n, shape, _)| set.get(n).map(|t| t.shape() == shape.as_slice()).unwrap_or(false));
        if !ok {
            return Err(AutodiffError::CorruptCheckpoint("tensors do not match the encoder layout".into()).into());
        }
    }
    Ok(Checkpoint {
        params: EncoderParams { online, target },
        config,
        step: manifest.step,
    })
}
