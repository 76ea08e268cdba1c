use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::viz::VizSpec;
use super::{HarnessError, Result};
use crate::contrastive::{Objective, TrainConfig};
use crate::lowshot::{SplitName, SplitSpec};
use crate::model::EncoderConfig;
use crate::scenegen::DatasetSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setting {
    pub n_way: usize,
    pub k_shot: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classifier {
    /// Sum-of-max local matching.
    Local,
    /// Cosine 1-NN on pooled embeddings.
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub settings: Vec<Setting>,
    pub q_queries: usize,
    pub episodes: usize,
    /// Query cells per local match.
    pub k_points: usize,
    pub classifier: Classifier,
    pub splits: Vec<SplitName>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            settings: vec![Setting { n_way: 5, k_shot: 1 }, Setting { n_way: 5, k_shot: 5 }],
            q_queries: 5,
            episodes: 500,
            k_points: 8,
            classifier: Classifier::Local,
            splits: vec![SplitName::Val, SplitName::Test],
            seed: 0,
        }
    }
}

/// One ablation run: dotted-key overrides applied on top of the resolved
/// config, e.g. `{"train.strategy": "second_view_only"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub overrides: serde_json::Map<String, Value>,
}

fn default_objective() -> Objective {
    Objective::Dope
}

impl Variant {
    fn new(name: &str, objective: Objective, overrides: &[(&str, Value)]) -> Self {
        Self {
            name: name.into(),
            objective,
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    /// Strategies × pair modes, background removal off, mask prediction
    /// off and the global baseline.
    pub fn default_matrix() -> Vec<Variant> {
        let d = Objective::Dope;
        let s = |x: &str| Value::String(x.into());
        let mut out = Vec::new();
        for (mode, suffix) in [("multi_view", ""), ("single_view_augmented", "/single_view")] {
            for strat in ["both", "other_objects_only", "second_view_only"] {
                out.push(Variant::new(
                    &format!("{strat}{suffix}"),
                    d,
                    &[("train.strategy", s(strat)), ("train.pair_mode", s(mode))],
                ));
            }
        }
        out.push(Variant::new(
            "no_background_remove",
            d,
            &[("train.random_background_remove", Value::Bool(false))],
        ));
        out.push(Variant::new("no_mask_prediction", d, &[("train.predict_mask", Value::Bool(false))]));
        out.push(Variant::new("global_baseline", Objective::Global, &[]));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "runs/data".into(),
            checkpoint: "runs/checkpoint".into(),
            report: "runs/report".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into the dataset, training and evaluation seeds on resolve.
    pub seed: u64,
    /// Objective of the `train` command.
    pub objective: Objective,
    pub dataset: DatasetSpec,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub eval: EvalConfig,
    pub ablation: Vec<Variant>,
    pub viz: VizSpec,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objective: Objective::Dope,
            dataset: DatasetSpec::default(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::contiguous(4, 5, 5),
            eval: EvalConfig::default(),
            ablation: Variant::default_matrix(),
            viz: VizSpec::default(),
            paths: Paths::default(),
        }
    }
}

/// Sets the value at a dotted key. The key must already exist; `raw` is
/// parsed as JSON unless the existing value is a string.
pub fn apply_override(root: &mut Value, key: &str, raw: &Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let next = match cur {
            Value::Object(m) => m.get_mut(*part),
            Value::Array(a) => part.parse::<usize>().ok().and_then(|j| a.get_mut(j)),
            _ => None,
        };
        cur = next.ok_or_else(|| {
            HarnessError::Config(format!("unknown key `{}`", parts[..=i].join(".")))
        })?;
    }
    *cur = match (&*cur, raw) {
        (Value::String(_), Value::String(_)) => raw.clone(),
        (Value::String(_), other) => Value::String(other.to_string()),
        (_, Value::String(s)) => serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.clone())),
        _ => raw.clone(),
    };
    Ok(())
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides in order, then `env_seed`, then propagates the
    /// global seed and validates.
    pub fn resolve(self, overrides: &[(String, Value)], env_seed: Option<u64>) -> Result<Self> {
        let mut v = serde_json::to_value(&self).map_err(config_err)?;
        for (k, raw) in overrides {
            apply_override(&mut v, k, raw)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(v).map_err(config_err)?;
        if let Some(s) = env_seed {
            cfg.seed = s;
        }
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn propagate_seed(&mut self) {
        self.dataset.seed = self.seed;
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
    }

    /// Config for one ablation run.
    pub fn with_variant(&self, variant: &Variant) -> Result<Self> {
        let overrides: Vec<(String, Value)> =
            variant.overrides.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut v = serde_json::to_value(self).map_err(config_err)?;
        for (k, raw) in &overrides {
            apply_override(&mut v, k, raw)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(v).map_err(config_err)?;
        cfg.objective = variant.objective;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(config_err)?;
        self.model.validate().map_err(config_err)?;
        self.train.validate().map_err(config_err)?;
        let cam = &self.dataset.camera;
        if cam.width != self.model.input_size || cam.height != self.model.input_size {
            return Err(HarnessError::Config(format!(
                "camera {}x{} does not match model input {}",
                cam.width, cam.height, self.model.input_size
            )));
        }
        if self.model.in_channels != 3 {
            return Err(HarnessError::Config("model.in_channels must be 3 for RGB views".into()));
        }
        if self.dataset.grid_stride != self.model.stride() {
            return Err(HarnessError::Config(format!(
                "dataset.grid_stride {} differs from model stride {}",
                self.dataset.grid_stride,
                self.model.stride()
            )));
        }
        let ids: Vec<usize> = self.dataset.categories.iter().map(|c| c.category_id).collect();
        self.split.validate(&ids).map_err(config_err)?;
        let e = &self.eval;
        if e.settings.is_empty() || e.settings.iter().any(|s| s.n_way == 0 || s.k_shot == 0) {
            return Err(HarnessError::Config("eval.settings need n_way >= 1 and k_shot >= 1".into()));
        }
        if e.q_queries == 0 || e.episodes == 0 || e.k_points == 0 {
            return Err(HarnessError::Config(
                "eval.q_queries, eval.episodes and eval.k_points must be >= 1".into(),
            ));
        }
        let mut names = BTreeSet::new();
        for v in &self.ablation {
            if !names.insert(&v.name) {
                return Err(HarnessError::Config(format!("duplicate ablation name `{}`", v.name)));
            }
        }
        if self.viz.targets.is_empty() {
            return Err(HarnessError::Config("viz.targets must not be empty".into()));
        }
        Ok(())
    }
}
