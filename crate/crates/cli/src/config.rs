//! Run configuration: one strict JSON document plus dotted overrides.

use std::path::Path;

use radloc::field::{GeneratorConfig, SamplingConfig};
use radloc::matching::LossConfig;
use radloc::model::ModelConfig;
use radloc::train::{TrainConfig, ViewConfig};
use radloc::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Which scenes of the corpus a command uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Val,
}

/// Scene corpus: generated from the root seed unless a scene directory is
/// passed on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scenes: usize,
    pub generator: GeneratorConfig,
    pub train_split: Split,
    pub eval_split: Split,
}

/// Everything a run depends on. The root seed is `train.seed`.
///
/// Defaults (see [`RunConfig::default`]) describe the desk-scale overfit
/// setting: four generated scenes with one orbit view each, 24×18 rays with
/// 16 samples, width 64, 8 queries, 300 epochs. A config file must spell out
/// every field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub views: ViewConfig,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub thresholds: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig {
                scenes: 4,
                generator: GeneratorConfig::default(),
                train_split: Split::All,
                eval_split: Split::All,
            },
            views: ViewConfig { poses_per_scene: 1, ..ViewConfig::default() },
            sampling: SamplingConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            thresholds: radloc::eval::THRESHOLDS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.scenes == 0 {
            return Err(Error::Config("data.scenes must be >= 1".into()));
        }
        let g = &self.data.generator;
        if g.min_objects == 0 || g.min_objects > g.max_objects {
            return Err(Error::Config("data.generator needs 1 <= min_objects <= max_objects".into()));
        }
        if g.max_objects > self.model.queries {
            return Err(Error::Config(format!(
                "data.generator.max_objects = {} exceeds model.queries = {}",
                g.max_objects, self.model.queries
            )));
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::Config("thresholds must be non-empty and in (0, 1]".into()));
        }
        self.views.validate()?;
        self.sampling.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    /// Parses a complete config document; missing or unknown keys are
    /// reported with their dotted path.
    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or the defaults when `None`), applies `key=value`
    /// overrides and an optional seed, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        Self::resolve(&RunConfig::default(), path, overrides, seed)
    }

    /// Like [`RunConfig::load`] but starting from `base` when no file is given.
    pub fn resolve(base: &RunConfig, path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(base)?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        if let Some(s) = seed {
            apply_override(&mut value, &format!("train.seed={s}"))?;
        }
        Self::from_value(value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Sets an existing dotted key, e.g. `train.epochs=20` or
/// `sampling.grid=[6,6]`. The value is parsed as JSON, falling back to a
/// plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let mut node = &mut *root;
    for part in key.split('.') {
        node = node.get_mut(part).ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
